//! Update fields on the mixed Gaussian and their repeated application.

use crate::error::{Result, TdcaError};
use crate::tasks::MixedGaussian;
use crate::tdca::{point_state, BottomUp, TdcaNetwork};

pub const FIELD_STEPS: usize = 200;
pub const FIELD_SCALE: f64 = 0.1;
pub const BASIN_RADIUS: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
pub enum FieldSource<'a> {
    /// `-grad f`.
    Bp,
    /// Displacement proposed by an evolved credit net.
    Tdca(&'a TdcaNetwork),
}

impl FieldSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            FieldSource::Bp => "bp",
            FieldSource::Tdca(_) => "tdca",
        }
    }

    pub fn vector(&self, f: &MixedGaussian, p: [f64; 2]) -> Result<[f64; 2]> {
        match self {
            FieldSource::Bp => {
                let g = f.grad(p);
                Ok([-g[0], -g[1]])
            }
            FieldSource::Tdca(net) => {
                if net.bottom_up != BottomUp::Point(2) {
                    return Err(TdcaError::Dimension("credit network does not drive a 2-D point".into()));
                }
                let c = net.generate_credits(&point_state(&p, f.value(p)))?;
                Ok([c.values[0], c.values[1]])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl FieldGrid {
    pub fn points(&self) -> Vec<[f64; 2]> {
        let step = if self.n > 1 {
            (self.hi - self.lo) / (self.n - 1) as f64
        } else {
            0.0
        };
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.push([self.lo + j as f64 * step, self.lo + i as f64 * step]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

pub fn gradient_field(source: FieldSource<'_>, f: &MixedGaussian, grid: &FieldGrid) -> Result<Vec<FieldSample>> {
    if grid.n == 0 || !(grid.lo <= grid.hi) {
        return Err(TdcaError::Config("field grid needs points and an increasing range".into()));
    }
    grid.points()
        .into_iter()
        .map(|p| {
            let [dx, dy] = source.vector(f, p)?;
            Ok(FieldSample { x: p[0], y: p[1], dx, dy })
        })
        .collect()
}

/// Follows `p += scale * field(p)` for `steps` steps.
pub fn follow_field(source: FieldSource<'_>, f: &MixedGaussian, start: [f64; 2], steps: usize, scale: f64) -> Result<[f64; 2]> {
    let mut p = start;
    for _ in 0..steps {
        let d = source.vector(f, p)?;
        p = [p[0] + scale * d[0], p[1] + scale * d[1]];
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(TdcaError::NonFinite("field trajectory".into()));
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOutcome {
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Component whose center the flow ended near, if any.
    pub basin: Option<usize>,
}

/// Repeated application from every grid point with the standard step count,
/// scale and convergence radius.
pub fn field_flow(source: FieldSource<'_>, f: &MixedGaussian, grid: &FieldGrid) -> Result<Vec<FlowOutcome>> {
    grid.points()
        .into_iter()
        .map(|start| {
            let end = follow_field(source, f, start, FIELD_STEPS, FIELD_SCALE)?;
            Ok(FlowOutcome {
                start,
                end,
                basin: f.basin_of(end, BASIN_RADIUS),
            })
        })
        .collect()
}
