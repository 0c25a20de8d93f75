//! Neighbor structures over a layer's neurons and the Gaussian kernel that
//! spreads a few group credits to every neuron.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdcaError};

/// Bandwidths at or below this use the nearest-anchor limit.
pub const SIGMA_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NeighborStructure {
    Line { length: usize },
    Grid { height: usize, width: usize },
}

impl NeighborStructure {
    pub fn size(&self) -> usize {
        match *self {
            NeighborStructure::Line { length } => length,
            NeighborStructure::Grid { height, width } => height * width,
        }
    }

    /// Position of neuron `index`: `(index, 0)` on a line, `(row, col)` on a
    /// row-major grid.
    pub fn coordinate(&self, index: usize) -> (f64, f64) {
        match *self {
            NeighborStructure::Line { .. } => (index as f64, 0.0),
            NeighborStructure::Grid { width, .. } => ((index / width) as f64, (index % width) as f64),
        }
    }

    pub fn coordinates(&self) -> Vec<(f64, f64)> {
        (0..self.size()).map(|i| self.coordinate(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub anchors: Vec<(f64, f64)>,
    /// Index of the nearest anchor for every neuron.
    pub membership: Vec<usize>,
    /// Nominal neurons per credit.
    pub group_size: f64,
}

impl GroupAssignment {
    pub fn credit_count(&self) -> usize {
        self.anchors.len()
    }

    /// Mean spacing between neighboring anchors along each axis.
    pub fn stride(&self, structure: &NeighborStructure) -> f64 {
        match *structure {
            NeighborStructure::Line { length } => length as f64 / self.anchors.len() as f64,
            NeighborStructure::Grid { height, width } => {
                let (rows, cols) = lattice_shape(self.anchors.len(), height, width)
                    .unwrap_or((1, self.anchors.len()));
                0.5 * (height as f64 / rows as f64 + width as f64 / cols as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionKernel {
    sigma: f64,
}

impl DiffusionKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(TdcaError::Config(format!("diffusion sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    /// Half the anchor stride.
    pub fn default_for(assignment: &GroupAssignment, structure: &NeighborStructure) -> Self {
        Self {
            sigma: 0.5 * assignment.stride(structure),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Rows and columns of the anchor lattice for `credits` anchors on an
/// `height x width` grid. Uses the most square factorization, oriented so the
/// longer lattice side follows the longer grid side.
pub fn lattice_shape(credits: usize, height: usize, width: usize) -> Result<(usize, usize)> {
    let mut small = (credits as f64).sqrt().floor() as usize;
    while small > 1 && credits % small != 0 {
        small -= 1;
    }
    let small = small.max(1);
    let large = credits / small;
    let (rows, cols) = if height > width { (large, small) } else { (small, large) };
    if rows > height || cols > width {
        return Err(TdcaError::Config(format!(
            "{credits} credits do not form a lattice that fits a {height}x{width} grid"
        )));
    }
    Ok((rows, cols))
}

/// Evenly spaced positions: `floor((a + 1/2) * length / count)`.
fn centered_positions(count: usize, length: usize) -> Vec<f64> {
    let stride = length as f64 / count as f64;
    (0..count)
        .map(|a| ((a as f64 + 0.5) * stride).floor())
        .collect()
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

pub fn assign_groups(
    neuron_count: usize,
    credit_count: usize,
    structure: &NeighborStructure,
) -> Result<GroupAssignment> {
    if structure.size() != neuron_count {
        return Err(TdcaError::Dimension(format!(
            "structure holds {} neurons but the layer has {neuron_count}",
            structure.size()
        )));
    }
    if credit_count == 0 || credit_count > neuron_count {
        return Err(TdcaError::Config(format!(
            "credit count must lie in 1..={neuron_count}, got {credit_count}"
        )));
    }
    let anchors: Vec<(f64, f64)> = match *structure {
        NeighborStructure::Line { length } => centered_positions(credit_count, length)
            .into_iter()
            .map(|p| (p, 0.0))
            .collect(),
        NeighborStructure::Grid { height, width } => {
            let (rows, cols) = lattice_shape(credit_count, height, width)?;
            let rs = centered_positions(rows, height);
            let cs = centered_positions(cols, width);
            rs.iter()
                .flat_map(|&r| cs.iter().map(move |&c| (r, c)))
                .collect()
        }
    };
    let membership = structure
        .coordinates()
        .into_iter()
        .map(|p| nearest(&anchors, p))
        .collect();
    Ok(GroupAssignment {
        anchors,
        membership,
        group_size: neuron_count as f64 / credit_count as f64,
    })
}

/// Nearest anchor, ties to the lowest index.
fn nearest(anchors: &[(f64, f64)], p: (f64, f64)) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (a, &anchor) in anchors.iter().enumerate() {
        let d = dist2(anchor, p);
        if d < best_d {
            best = a;
            best_d = d;
        }
    }
    best
}

/// Row-normalized `neurons x anchors` weight matrix. Row `j` holds the weight
/// neuron `j` gives each anchor's credit.
pub fn diffusion_weights(
    assignment: &GroupAssignment,
    structure: &NeighborStructure,
    kernel: &DiffusionKernel,
) -> Array2<f64> {
    let coords = structure.coordinates();
    let k = assignment.anchors.len();
    let mut w = Array2::zeros((coords.len(), k));
    if kernel.sigma <= SIGMA_LIMIT {
        for (j, &a) in assignment.membership.iter().enumerate() {
            w[[j, a]] = 1.0;
        }
        return w;
    }
    let two_s2 = 2.0 * kernel.sigma * kernel.sigma;
    for (j, &p) in coords.iter().enumerate() {
        let d2: Vec<f64> = assignment.anchors.iter().map(|&a| dist2(a, p)).collect();
        // Shifting by the smallest distance keeps the nearest weight at 1.
        let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (a, &d) in d2.iter().enumerate() {
            let v = (-(d - min) / two_s2).exp();
            w[[j, a]] = v;
            total += v;
        }
        for a in 0..k {
            w[[j, a]] /= total;
        }
    }
    w
}

pub fn diffuse(
    group_credits: &[f64],
    assignment: &GroupAssignment,
    structure: &NeighborStructure,
    kernel: &DiffusionKernel,
) -> Result<Vec<f64>> {
    if group_credits.len() != assignment.anchors.len() {
        return Err(TdcaError::Dimension(format!(
            "{} group credits for {} anchors",
            group_credits.len(),
            assignment.anchors.len()
        )));
    }
    if kernel.sigma <= SIGMA_LIMIT {
        return Ok(assignment
            .membership
            .iter()
            .map(|&a| group_credits[a])
            .collect());
    }
    let w = diffusion_weights(assignment, structure, kernel);
    Ok(w.dot(&Array1::from(group_credits.to_vec())).to_vec())
}

/// Grouped-credit description stored in checkpoints and configs, e.g.
/// `group kind=grid h=10 w=10 credits=36 sigma=2.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSpec {
    pub structure: NeighborStructure,
    pub credits: usize,
    pub sigma: f64,
    /// Output neurons get their own dedicated credits unless this is set.
    pub include_outputs: bool,
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.structure {
            NeighborStructure::Line { length } => write!(f, "group kind=line n={length}")?,
            NeighborStructure::Grid { height, width } => {
                write!(f, "group kind=grid h={height} w={width}")?
            }
        }
        write!(f, " credits={} sigma={}", self.credits, self.sigma)?;
        if self.include_outputs {
            write!(f, " outputs=diffused")?;
        }
        Ok(())
    }
}

impl FromStr for GroupSpec {
    type Err = TdcaError;

    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split_whitespace();
        if tokens.next() != Some("group") {
            return Err(TdcaError::Config(format!("`{s}` is not a group line")));
        }
        let mut kind = None;
        let (mut n, mut h, mut w, mut credits, mut sigma) = (None, None, None, None, None);
        let mut include_outputs = false;
        for token in tokens {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| TdcaError::Config(format!("bad token `{token}` in `{s}`")))?;
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| TdcaError::Config(format!("bad integer in `{token}`")))
            };
            match key {
                "kind" => kind = Some(value.to_string()),
                "n" => n = Some(int()?),
                "h" => h = Some(int()?),
                "w" => w = Some(int()?),
                "credits" => credits = Some(int()?),
                "sigma" => {
                    sigma = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| TdcaError::Config(format!("bad sigma in `{token}`")))?,
                    )
                }
                "outputs" => include_outputs = value == "diffused",
                other => return Err(TdcaError::Config(format!("unknown key `{other}` in `{s}`"))),
            }
        }
        let missing = |what: &str| TdcaError::Config(format!("`{s}` lacks `{what}`"));
        let structure = match kind.as_deref() {
            Some("line") => NeighborStructure::Line {
                length: n.ok_or_else(|| missing("n"))?,
            },
            Some("grid") => NeighborStructure::Grid {
                height: h.ok_or_else(|| missing("h"))?,
                width: w.ok_or_else(|| missing("w"))?,
            },
            _ => return Err(missing("kind=line|grid")),
        };
        Ok(GroupSpec {
            structure,
            credits: credits.ok_or_else(|| missing("credits"))?,
            sigma: sigma.ok_or_else(|| missing("sigma"))?,
            include_outputs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_assignment() {
        let s = NeighborStructure::Line { length: 100 };
        let g = assign_groups(100, 100, &s).unwrap();
        assert_eq!(g.membership, (0..100).collect::<Vec<_>>());
        for (a, anchor) in g.anchors.iter().enumerate() {
            assert_eq!(anchor.0, a as f64);
        }
    }

    #[test]
    fn ten_line_anchors() {
        let s = NeighborStructure::Line { length: 100 };
        let g = assign_groups(100, 10, &s).unwrap();
        let xs: Vec<f64> = g.anchors.iter().map(|a| a.0).collect();
        assert_eq!(xs, vec![5.0, 15.0, 25.0, 35.0, 45.0, 55.0, 65.0, 75.0, 85.0, 95.0]);
        assert_eq!(g.group_size, 10.0);
        // Neuron 10 sits 5 from anchors 0 and 1: lower index wins.
        assert_eq!(g.membership[10], 0);
        assert_eq!(g.membership[11], 1);
    }

    #[test]
    fn six_by_six_grid() {
        let s = NeighborStructure::Grid { height: 10, width: 10 };
        let g = assign_groups(100, 36, &s).unwrap();
        assert_eq!(g.anchors.len(), 36);
        assert_eq!(lattice_shape(36, 10, 10).unwrap(), (6, 6));
        let mut rows: Vec<f64> = g.anchors.iter().map(|a| a.0).collect();
        rows.dedup();
        assert_eq!(rows.len(), 6);
    }

    #[test]
    fn too_many_credits() {
        let s = NeighborStructure::Line { length: 5 };
        assert!(assign_groups(5, 6, &s).is_err());
        assert!(assign_groups(5, 0, &s).is_err());
        assert!(assign_groups(4, 2, &s).is_err());
    }

    #[test]
    fn equal_credits_pass_through() {
        let s = NeighborStructure::Grid { height: 4, width: 5 };
        let g = assign_groups(20, 4, &s).unwrap();
        let k = DiffusionKernel::new(1.3).unwrap();
        let out = diffuse(&[0.7; 4], &g, &s, &k).unwrap();
        for v in out {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_midpoint() {
        let s = NeighborStructure::Line { length: 3 };
        let g = GroupAssignment {
            anchors: vec![(0.0, 0.0), (2.0, 0.0)],
            membership: vec![0, 0, 1],
            group_size: 1.5,
        };
        let k = DiffusionKernel::new(1.0).unwrap();
        let out = diffuse(&[1.0, 0.0], &g, &s, &k).unwrap();
        assert!((out[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tiny_sigma_copies_nearest_anchor() {
        let s = NeighborStructure::Line { length: 10 };
        let g = assign_groups(10, 3, &s).unwrap();
        let k = DiffusionKernel::new(1e-7).unwrap();
        let credits = [1.0, 2.0, 3.0];
        let out = diffuse(&credits, &g, &s, &k).unwrap();
        for (j, v) in out.iter().enumerate() {
            assert_eq!(*v, credits[g.membership[j]]);
        }
        assert!(diffuse(&[1.0], &g, &s, &k).is_err());
        assert!(DiffusionKernel::new(0.0).is_err());
    }

    #[test]
    fn group_line_round_trip() {
        let spec = GroupSpec {
            structure: NeighborStructure::Grid { height: 10, width: 10 },
            credits: 36,
            sigma: 2.5,
            include_outputs: false,
        };
        let text = spec.to_string();
        assert_eq!(text, "group kind=grid h=10 w=10 credits=36 sigma=2.5");
        assert_eq!(text.parse::<GroupSpec>().unwrap(), spec);
        let line: GroupSpec = "group kind=line n=100 credits=10 sigma=5 outputs=diffused"
            .parse()
            .unwrap();
        assert!(line.include_outputs);
        assert_eq!(line.structure, NeighborStructure::Line { length: 100 });
        assert!("group kind=ring n=3 credits=1 sigma=1".parse::<GroupSpec>().is_err());
    }
}
