use serde::{Deserialize, Serialize};

use crate::error::{Result, TdcaError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub width: f64,
}

/// `f(x) = -sum_c a_c exp(-|x - c|^2 / (2 w_c^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedGaussian {
    components: Vec<GaussianComponent>,
}

impl Default for MixedGaussian {
    fn default() -> Self {
        Self {
            components: vec![
                GaussianComponent {
                    center: [0.0, 0.0],
                    amplitude: 2.0,
                    width: 1.0,
                },
                GaussianComponent {
                    center: [2.2, 2.2],
                    amplitude: 0.8,
                    width: 0.6,
                },
            ],
        }
    }
}

/// Summary of a dense grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMinimum {
    pub point: [f64; 2],
    pub value: f64,
    pub spacing: f64,
}

impl MixedGaussian {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.len() < 2 {
            return Err(TdcaError::Config("a mixed Gaussian needs two components".into()));
        }
        for c in &components {
            if !(c.amplitude > 0.0) || !(c.width > 0.0) {
                return Err(TdcaError::Config("amplitudes and widths must be positive".into()));
            }
        }
        let top = components.iter().map(|c| c.amplitude).fold(0.0, f64::max);
        if components.iter().filter(|c| c.amplitude == top).count() != 1 {
            return Err(TdcaError::Config(
                "exactly one component must have the largest amplitude".into(),
            ));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Component with the largest amplitude.
    pub fn dominant(&self) -> &GaussianComponent {
        self.components
            .iter()
            .max_by(|a, b| a.amplitude.total_cmp(&b.amplitude))
            .expect("at least two components")
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        -self
            .components
            .iter()
            .map(|c| {
                let d2 = (p[0] - c.center[0]).powi(2) + (p[1] - c.center[1]).powi(2);
                c.amplitude * (-d2 / (2.0 * c.width * c.width)).exp()
            })
            .sum::<f64>()
    }

    pub fn grad(&self, p: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for c in &self.components {
            let w2 = c.width * c.width;
            let dx = p[0] - c.center[0];
            let dy = p[1] - c.center[1];
            let e = c.amplitude * (-(dx * dx + dy * dy) / (2.0 * w2)).exp() / w2;
            g[0] += e * dx;
            g[1] += e * dy;
        }
        g
    }

    /// Plain gradient descent on the function.
    pub fn descend(&self, start: [f64; 2], lr: f64, steps: usize) -> Vec<[f64; 2]> {
        let mut path = Vec::with_capacity(steps + 1);
        let mut p = start;
        path.push(p);
        for _ in 0..steps {
            let g = self.grad(p);
            p = [p[0] - lr * g[0], p[1] - lr * g[1]];
            path.push(p);
        }
        path
    }

    /// Stationary point reached by descent from a component's center.
    pub fn minimum_near(&self, component: usize) -> ([f64; 2], f64) {
        let start = self.components[component].center;
        let w = self.components[component].width;
        let path = self.descend(start, 0.5 * w * w, 20_000);
        let p = *path.last().expect("non-empty path");
        (p, self.value(p))
    }

    /// Global minimum: the stationary point next to the dominant component.
    pub fn global_minimum(&self) -> ([f64; 2], f64) {
        let idx = self
            .components
            .iter()
            .position(|c| c == self.dominant())
            .expect("dominant is a component");
        self.minimum_near(idx)
    }

    /// Brute-force search over an `n x n` grid covering `[lo, hi]^2`.
    pub fn grid_minimum(&self, lo: f64, hi: f64, n: usize) -> GridMinimum {
        let spacing = (hi - lo) / (n - 1) as f64;
        let mut best = GridMinimum {
            point: [lo, lo],
            value: f64::INFINITY,
            spacing,
        };
        for i in 0..n {
            for j in 0..n {
                let p = [lo + i as f64 * spacing, lo + j as f64 * spacing];
                let v = self.value(p);
                if v < best.value {
                    best.point = p;
                    best.value = v;
                }
            }
        }
        best
    }

    /// Index of the component whose center is within `radius` of `p`.
    pub fn basin_of(&self, p: [f64; 2], radius: f64) -> Option<usize> {
        self.components.iter().position(|c| {
            ((p[0] - c.center[0]).powi(2) + (p[1] - c.center[1]).powi(2)).sqrt() <= radius
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_at_global_center() {
        let f = MixedGaussian::default();
        let small = 0.8 * (-(2.2f64 * 2.2 * 2.0) / (2.0 * 0.36)).exp();
        assert!((f.value([0.0, 0.0]) + 2.0 + small).abs() < 1e-15);
        assert!(f.value([1e6, 1e6]).abs() < 1e-300);
    }

    #[test]
    fn symmetric_about_diagonal() {
        let f = MixedGaussian::default();
        for &(x, y) in &[(0.3, 1.7), (-2.0, 4.0), (2.5, 2.0)] {
            assert_eq!(f.value([x, y]), f.value([y, x]));
        }
    }

    #[test]
    fn single_center_is_stationary() {
        let one = MixedGaussian {
            components: vec![GaussianComponent {
                center: [1.0, -1.0],
                amplitude: 1.0,
                width: 0.5,
            }],
        };
        assert_eq!(one.grad([1.0, -1.0]), [0.0, 0.0]);
    }

    #[test]
    fn validation() {
        let c = GaussianComponent {
            center: [0.0, 0.0],
            amplitude: 1.0,
            width: 1.0,
        };
        assert!(MixedGaussian::new(vec![c]).is_err());
        assert!(MixedGaussian::new(vec![c, c]).is_err());
        let mut d = c;
        d.amplitude = 2.0;
        assert!(MixedGaussian::new(vec![c, d]).is_ok());
    }
}
