//! PCA planes through recorded training trajectories and loss evaluation on
//! those planes.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Result, TdcaError};
use crate::nn::{cross_entropy, LayerSpec, Mlp, ParamVector};
use crate::tasks::Dataset;
use crate::tdca::{InnerLoopTrace, StepRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub method: String,
    /// Initial parameters followed by one snapshot per step.
    pub snapshots: Vec<ParamVector>,
    pub metrics: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn from_trace(method: &str, trace: &InnerLoopTrace) -> Result<Self> {
        if trace.snapshots.len() != trace.steps.len() + 1 {
            return Err(TdcaError::Missing(format!(
                "{method} trace holds {} snapshots for {} steps",
                trace.snapshots.len(),
                trace.steps.len()
            )));
        }
        Ok(Self {
            method: method.to_string(),
            snapshots: trace.snapshots.clone(),
            metrics: trace.steps.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub origin: Vec<f64>,
    pub directions: [Vec<f64>; 2],
    /// Share of variance along every principal axis, descending.
    pub explained: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub u_values: Vec<f64>,
    pub v_values: Vec<f64>,
    /// `loss[[i, j]]` is the loss at `(u_values[j], v_values[i])`.
    pub loss: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Distance between the point and its in-plane reconstruction.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    n
}

/// Principal axes of a point cloud: eigen-decomposition of the small
/// `k x k` Gram matrix of the centered points.
fn principal_axes(points: &[&[f64]], count: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let k = points.len();
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += x / k as f64;
        }
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(&centered[i], &centered[j]));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = values[0];
    if count > values.len() || !(top > 0.0) || values[count - 1] <= 1e-12 * top {
        return Err(TdcaError::Degenerate(format!(
            "snapshot set has fewer than {count} independent directions"
        )));
    }
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(count);
    for &i in order.iter().take(count) {
        let v = eig.eigenvectors.column(i);
        let mut dir = vec![0.0; dim];
        for (r, c) in centered.iter().enumerate() {
            for (d, x) in dir.iter_mut().zip(c) {
                *d += v[r] * x;
            }
        }
        for prev in &axes {
            let proj = dot(&dir, prev);
            dir.iter_mut().zip(prev).for_each(|(d, p)| *d -= proj * p);
        }
        normalize(&mut dir);
        axes.push(dir);
    }
    let total: f64 = values.iter().sum();
    Ok((axes, values.iter().map(|v| v / total).collect()))
}

/// Plane spanned by the first two principal components of both
/// trajectories' snapshots, anchored at the first trajectory's start.
pub fn pca_plane(a: &TrajectoryLog, b: &TrajectoryLog) -> Result<Plane> {
    let points: Vec<&[f64]> = a
        .snapshots
        .iter()
        .chain(&b.snapshots)
        .map(ParamVector::values)
        .collect();
    if points.len() < 3 {
        return Err(TdcaError::Degenerate("need at least three snapshots".into()));
    }
    if points.iter().any(|p| p.len() != points[0].len()) {
        return Err(TdcaError::Dimension("trajectories use different architectures".into()));
    }
    let (mut axes, explained) = principal_axes(&points, 2)?;
    let second = axes.pop().expect("two axes");
    let first = axes.pop().expect("two axes");
    Ok(Plane {
        origin: a.snapshots[0].values().to_vec(),
        directions: [first, second],
        explained,
    })
}

/// First principal direction of a single trajectory.
pub fn principal_direction(traj: &TrajectoryLog) -> Result<Vec<f64>> {
    let points: Vec<&[f64]> = traj.snapshots.iter().map(ParamVector::values).collect();
    if points.len() < 2 {
        return Err(TdcaError::Degenerate("need at least two snapshots".into()));
    }
    Ok(principal_axes(&points, 1)?.0.remove(0))
}

/// Angle in degrees between two lines through the origin (0 to 90).
pub fn line_angle_degrees(a: &[f64], b: &[f64]) -> f64 {
    let c = (dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())).abs().min(1.0);
    c.acos().to_degrees()
}

pub fn project(plane: &Plane, theta: &[f64]) -> Projection {
    let d: Vec<f64> = theta.iter().zip(&plane.origin).map(|(t, o)| t - o).collect();
    let u = dot(&d, &plane.directions[0]);
    let v = dot(&d, &plane.directions[1]);
    let residual = d
        .iter()
        .zip(&plane.directions[0])
        .zip(&plane.directions[1])
        .map(|((x, a), b)| (x - u * a - v * b).powi(2))
        .sum::<f64>()
        .sqrt();
    Projection { u, v, residual }
}

/// Grid bounds covering every projected snapshot with a relative margin.
pub fn auto_grid(plane: &Plane, trajectories: &[&TrajectoryLog], rows: usize, cols: usize, margin: f64) -> GridSpec {
    let (mut ulo, mut uhi, mut vlo, mut vhi) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for t in trajectories {
        for s in &t.snapshots {
            let p = project(plane, s.values());
            ulo = ulo.min(p.u);
            uhi = uhi.max(p.u);
            vlo = vlo.min(p.v);
            vhi = vhi.max(p.v);
        }
    }
    let pad = |lo: f64, hi: f64| {
        let span = (hi - lo).max(1e-6);
        [lo - margin * span, hi + margin * span]
    };
    GridSpec {
        rows,
        cols,
        u_range: pad(ulo, uhi),
        v_range: pad(vlo, vhi),
    }
}

fn linspace(range: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range[0] + range[1])];
    }
    (0..n)
        .map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Cross-entropy over `data` at `origin + u d1 + v d2` for every grid node.
pub fn landscape_eval(specs: &[LayerSpec], data: &Dataset, plane: &Plane, grid: &GridSpec) -> Result<LandscapeGrid> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(TdcaError::Config("landscape grid needs rows and columns".into()));
    }
    let u_values = linspace(grid.u_range, grid.cols);
    let v_values = linspace(grid.v_range, grid.rows);
    let targets = data.targets();
    let mut loss = Array2::zeros((grid.rows, grid.cols));
    let mut theta = vec![0.0; plane.origin.len()];
    for (i, &v) in v_values.iter().enumerate() {
        for (j, &u) in u_values.iter().enumerate() {
            for (k, t) in theta.iter_mut().enumerate() {
                *t = plane.origin[k] + u * plane.directions[0][k] + v * plane.directions[1][k];
            }
            let mlp = Mlp::from_params(specs, &theta)?;
            let cache = mlp.evaluate(data.inputs())?;
            loss[[i, j]] = cross_entropy(cache.output(), &targets)?;
        }
    }
    Ok(LandscapeGrid {
        u_values,
        v_values,
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamLayout;

    fn traj(points: &[[f64; 3]]) -> TrajectoryLog {
        let layout = ParamLayout::from_specs(&[LayerSpec::new(2, 1, crate::nn::Activation::Identity)]);
        TrajectoryLog {
            method: "t".into(),
            snapshots: points
                .iter()
                .map(|p| ParamVector::new(p.to_vec(), layout.clone()).unwrap())
                .collect(),
            metrics: Vec::new(),
        }
    }

    #[test]
    fn collinear_snapshots_are_degenerate() {
        let a = traj(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]);
        let b = traj(&[[3.0, 3.0, 3.0]]);
        assert!(matches!(pca_plane(&a, &b), Err(TdcaError::Degenerate(_))));
    }

    #[test]
    fn orthogonal_trajectories_span_plane() {
        let a = traj(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let b = traj(&[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 2.0, 0.0]]);
        let plane = pca_plane(&a, &b).unwrap();
        let [d1, d2] = &plane.directions;
        assert!((dot(d1, d1) - 1.0).abs() < 1e-10);
        assert!((dot(d2, d2) - 1.0).abs() < 1e-10);
        assert!(dot(d1, d2).abs() < 1e-10);
        assert!(d1[2].abs() < 1e-10 && d2[2].abs() < 1e-10);
        assert!((plane.explained[0] + plane.explained[1] - 1.0).abs() < 1e-10);
        assert!(plane.explained.windows(2).all(|w| w[0] >= w[1]));
        for s in a.snapshots.iter().chain(&b.snapshots) {
            assert!(project(&plane, s.values()).residual < 1e-10);
        }
        let da = principal_direction(&a).unwrap();
        let db = principal_direction(&b).unwrap();
        assert!((line_angle_degrees(&da, &db) - 90.0).abs() < 1e-8);
    }
}
