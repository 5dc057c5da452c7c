//! Midpoint-rule grids on rectangular domains in one and two dimensions.
//!
//! A grid is a tensor product of per-axis partitions.  Every node is a cell
//! midpoint and every weight is an exact cell volume, so the weights of any
//! grid, graded or not, telescope to the domain volume.  Graded grids refine
//! a single rectangular region by an integer factor; the region boundary
//! always coincides with cell boundaries, which keeps the telescoping exact.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Axis-aligned box in 1 or 2 dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
}

impl Domain {
    /// Builds a domain from per-axis bounds; each axis needs positive length.
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 {
            return Err(Error::Domain(format!(
                "domain dimension must be 1 or 2, got {}",
                bounds.len()
            )));
        }
        for &(lo, hi) in bounds {
            if !lo.is_finite() || !hi.is_finite() || hi - lo <= 0.0 {
                return Err(Error::Domain(format!(
                    "axis bounds ({lo}, {hi}) do not give a positive finite length"
                )));
            }
        }
        Ok(Domain {
            bounds: bounds.to_vec(),
        })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Domain::new(&[(lo, hi)])
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        Domain::new(&[x, y])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|&(lo, hi)| hi - lo).product()
    }
}

/// Single rectangular refinement region: node spacing inside `region` is the
/// base spacing divided by `factor`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grading {
    pub region: Vec<(f64, f64)>,
    pub factor: u32,
}

/// One axis of a tensor grid: sorted cell midpoints with their widths.
#[derive(Clone, Debug)]
struct Axis {
    mids: Vec<f64>,
    widths: Vec<f64>,
}

fn build_axis(lo: f64, hi: f64, count: usize, grading: Option<(f64, f64, u32)>) -> Result<Axis> {
    if count == 0 {
        return Err(Error::Domain("grid counts must be positive".into()));
    }
    let h = (hi - lo) / count as f64;
    let mut mids = Vec::new();
    let mut widths = Vec::new();
    // Each segment gets its own uniform midpoint partition; summing n copies
    // of len/n reproduces the segment length to rounding, so the weights
    // telescope across segments.
    let mut push_segment = |a: f64, b: f64, spacing: f64| {
        let len = b - a;
        if len <= 0.0 {
            return;
        }
        let n = ((len / spacing).round() as usize).max(1);
        let w = len / n as f64;
        for k in 0..n {
            mids.push(a + (k as f64 + 0.5) * w);
            widths.push(w);
        }
    };
    match grading {
        None => push_segment(lo, hi, h),
        Some((r0, r1, factor)) => {
            if !(r0.is_finite() && r1.is_finite()) || r1 - r0 <= 0.0 {
                return Err(Error::Domain(format!(
                    "grading region ({r0}, {r1}) does not give a positive length"
                )));
            }
            if r0 < lo || r1 > hi {
                return Err(Error::Domain(format!(
                    "grading region ({r0}, {r1}) is not contained in the axis ({lo}, {hi})"
                )));
            }
            if factor == 0 {
                return Err(Error::Domain("grading factor must be at least 1".into()));
            }
            push_segment(lo, r0, h);
            push_segment(r0, r1, h / factor as f64);
            push_segment(r1, hi, h);
        }
    }
    Ok(Axis { mids, widths })
}

/// Tensor-product midpoint grid.  Node `i` of a 2-d grid decomposes as
/// `i = iy * nx + ix` (x fastest).
#[derive(Debug)]
pub struct Grid {
    domain: Domain,
    axes: Vec<Axis>,
    nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

/// Builds the grid for `domain` with `counts` base cells per axis and an
/// optional graded refinement region.
pub fn build_grid(
    domain: &Domain,
    counts: &[usize],
    grading: Option<&Grading>,
) -> Result<Arc<Grid>> {
    let dim = domain.dim();
    if counts.len() != dim {
        return Err(Error::Domain(format!(
            "expected {} axis counts, got {}",
            dim,
            counts.len()
        )));
    }
    if let Some(g) = grading {
        if g.region.len() != dim {
            return Err(Error::Domain(format!(
                "grading region has {} axes, domain has {dim}",
                g.region.len()
            )));
        }
    }
    let mut axes = Vec::with_capacity(dim);
    for (axis, (&(lo, hi), &count)) in domain.bounds().iter().zip(counts).enumerate() {
        let g = grading.map(|g| (g.region[axis].0, g.region[axis].1, g.factor));
        axes.push(build_axis(lo, hi, count, g)?);
    }

    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    match dim {
        1 => {
            for (k, &x) in axes[0].mids.iter().enumerate() {
                nodes.push([x, 0.0]);
                weights.push(axes[0].widths[k]);
            }
        }
        _ => {
            for (ky, &y) in axes[1].mids.iter().enumerate() {
                for (kx, &x) in axes[0].mids.iter().enumerate() {
                    nodes.push([x, y]);
                    weights.push(axes[0].widths[kx] * axes[1].widths[ky]);
                }
            }
        }
    }
    Ok(Arc::new(Grid {
        domain: domain.clone(),
        axes,
        nodes,
        weights,
    }))
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Node coordinates; the second entry is 0 on 1-d grids.
    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sorted midpoints of one axis.
    pub fn axis_coords(&self, axis: usize) -> &[f64] {
        &self.axes[axis].mids
    }

    pub fn axis_widths(&self, axis: usize) -> &[f64] {
        &self.axes[axis].widths
    }

    pub fn index_of(&self, ix: usize, iy: usize) -> usize {
        iy * self.axes[0].mids.len() + ix
    }

    /// Index of the node nearest to `p`.  The grid is a tensor product, so
    /// the per-axis nearest midpoint is the global nearest node.
    pub fn index_of_nearest(&self, p: [f64; 2]) -> usize {
        let mut idx = [0usize; 2];
        for ax in 0..self.dim() {
            let mids = &self.axes[ax].mids;
            let k = mids.partition_point(|&c| c < p[ax]);
            idx[ax] = if k == 0 {
                0
            } else if k == mids.len() {
                mids.len() - 1
            } else if p[ax] - mids[k - 1] <= mids[k] - p[ax] {
                k - 1
            } else {
                k
            };
        }
        self.index_of(idx[0], idx[1])
    }

    /// Inverse of `index_of`; returns (ix, 0) on 1-d grids.
    pub fn split_index(&self, i: usize) -> (usize, usize) {
        let nx = self.axes[0].mids.len();
        (i % nx, i / nx)
    }
}

/// Node values of a scalar field together with the grid they live on.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridFunction {
    /// Samples `f` at every node.  Rejects non-finite samples.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut([f64; 2]) -> f64) -> Result<Self> {
        let values: Vec<f64> = grid.nodes.iter().map(|&p| f(p)).collect();
        Self::from_values(grid, values)
    }

    /// Wraps raw node values.  Rejects length mismatches and non-finite
    /// entries.
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Domain(format!(
                "value vector has length {}, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "grid function contains a non-finite value ({bad})"
            )));
        }
        Ok(GridFunction {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        assert!(c.is_finite(), "constant grid function must be finite");
        GridFunction {
            grid: Arc::clone(grid),
            values: vec![c; grid.node_count()],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when both functions live on the same grid instance.
    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
    }

    /// Midpoint-rule integral over the domain.
    pub fn integrate(&self) -> f64 {
        dot(&self.grid.weights, &self.values)
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.domain.volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Weighted L^p norm, p >= 1.
    pub fn lp_norm(&self, p: f64) -> f64 {
        assert!(p >= 1.0, "lp_norm needs p >= 1");
        let sum: f64 = self
            .values
            .iter()
            .zip(&self.grid.weights)
            .map(|(v, w)| w * v.abs().powf(p))
            .sum();
        sum.powf(1.0 / p)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |acc, &v| acc.min(v))
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v))
    }

    /// Applies `f` to every value, keeping the grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Self::from_values(&self.grid, values)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Errors unless `a` and `b` share a grid instance.
pub(crate) fn check_same_grid(a: &GridFunction, b: &GridFunction) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(Error::Domain(
            "grid functions live on different grids".into(),
        ))
    }
}

/// Errors unless `values` is strictly increasing. The comparison is negated
/// on purpose: a NaN entry must also fail, and `>=` would let it through.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub(crate) fn check_strictly_increasing(what: &str, values: &[f64]) -> Result<()> {
    for pair in values.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::Domain(format!(
                "{what} must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval(n: usize) -> Arc<Grid> {
        build_grid(&Domain::interval(0.0, 1.0).unwrap(), &[n], None).unwrap()
    }

    #[test]
    fn four_cell_unit_interval_nodes_and_weights() {
        let g = unit_interval(4);
        let xs: Vec<f64> = g.nodes().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(g.weights().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn weights_sum_to_volume() {
        for n in [1, 3, 7, 100, 1111] {
            let g = unit_interval(n);
            let total: f64 = g.weights().iter().sum();
            assert!((total - 1.0).abs() <= 1e-12, "n={n}: {total}");
        }
        let dom = Domain::rectangle((-1.0, 2.0), (0.0, 0.5)).unwrap();
        let g = build_grid(&dom, &[13, 9], None).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.5).abs() <= 1e-12);
    }

    #[test]
    fn graded_weights_telescope_exactly() {
        let grading = Grading {
            region: vec![(0.45, 0.55)],
            factor: 10,
        };
        let g = build_grid(
            &Domain::interval(0.0, 1.0).unwrap(),
            &[100],
            Some(&grading),
        )
        .unwrap();
        // 45 coarse + 100 fine + 45 coarse cells.
        assert_eq!(g.node_count(), 190);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        let xs = g.axis_coords(0);
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "nodes must increase");
    }

    #[test]
    fn graded_2d_weights_telescope() {
        let dom = Domain::rectangle((0.0, 1.0), (0.0, 1.0)).unwrap();
        let grading = Grading {
            region: vec![(0.4, 0.6), (0.4, 0.6)],
            factor: 5,
        };
        let g = build_grid(&dom, &[20, 20], Some(&grading)).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn nodes_are_interior() {
        let grading = Grading {
            region: vec![(0.0, 0.25)],
            factor: 4,
        };
        let g = build_grid(&Domain::interval(0.0, 1.0).unwrap(), &[8], Some(&grading)).unwrap();
        assert!(g
            .axis_coords(0)
            .iter()
            .all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn two_by_two_square() {
        let dom = Domain::rectangle((0.0, 1.0), (0.0, 1.0)).unwrap();
        let g = build_grid(&dom, &[2, 2], None).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.node(0), [0.25, 0.25]);
        assert_eq!(g.node(1), [0.75, 0.25]);
        assert_eq!(g.node(3), [0.75, 0.75]);
        assert!(g.weights().iter().all(|&w| w == 0.25));
        assert_eq!(g.split_index(3), (1, 1));
        assert_eq!(g.index_of(1, 1), 3);
    }

    #[test]
    fn integrate_x_squared() {
        let g = unit_interval(1000);
        let f = GridFunction::from_fn(&g, |p| p[0] * p[0]).unwrap();
        assert!((f.integrate() - 1.0 / 3.0).abs() <= 1e-6);
    }

    #[test]
    fn midpoint_error_is_second_order() {
        // exp(x) on [0,1]: exact integral e - 1.
        let exact = std::f64::consts::E - 1.0;
        let err = |n: usize| {
            let g = unit_interval(n);
            let f = GridFunction::from_fn(&g, |p| p[0].exp()).unwrap();
            (f.integrate() - exact).abs()
        };
        let ratio = err(64) / err(128);
        assert!(
            (3.2..=4.8).contains(&ratio),
            "halving h should quarter the error, ratio {ratio}"
        );
    }

    #[test]
    fn mean_and_norms() {
        let g = unit_interval(50);
        let f = GridFunction::constant(&g, -3.0);
        assert!((f.mean() + 3.0).abs() <= 1e-13);
        assert_eq!(f.sup_norm(), 3.0);
        assert!((f.lp_norm(2.0) - 3.0).abs() <= 1e-12);
        assert_eq!(f.min_value(), -3.0);
        assert_eq!(f.max_value(), -3.0);
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::interval(2.0, 1.0).is_err());
        assert!(Domain::new(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(Domain::new(&[]).is_err());
        assert!(Domain::interval(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn rejects_bad_grids() {
        let dom = Domain::interval(0.0, 1.0).unwrap();
        assert!(build_grid(&dom, &[0], None).is_err());
        assert!(build_grid(&dom, &[4, 4], None).is_err());
        let outside = Grading {
            region: vec![(0.5, 1.5)],
            factor: 2,
        };
        assert!(build_grid(&dom, &[10], Some(&outside)).is_err());
        let degenerate = Grading {
            region: vec![(0.5, 0.5)],
            factor: 2,
        };
        assert!(build_grid(&dom, &[10], Some(&degenerate)).is_err());
        let zero_factor = Grading {
            region: vec![(0.2, 0.4)],
            factor: 0,
        };
        assert!(build_grid(&dom, &[10], Some(&zero_factor)).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let g = unit_interval(4);
        assert!(GridFunction::from_values(&g, vec![1.0; 3]).is_err());
        assert!(GridFunction::from_values(&g, vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(GridFunction::from_fn(&g, |p| 1.0 / (p[0] - 0.125)).is_err());
    }

    #[test]
    fn same_grid_is_instance_identity() {
        let g1 = unit_interval(4);
        let g2 = unit_interval(4);
        let f1 = GridFunction::constant(&g1, 1.0);
        let f2 = GridFunction::constant(&g2, 1.0);
        assert!(!f1.same_grid(&f2));
        assert!(f1.same_grid(&f1.clone()));
    }
}
