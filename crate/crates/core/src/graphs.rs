//! Intention graphs: agent encodings scattered into a target-centred grid,
//! then convolutional social pooling fused with the target's own encoding.
//! The last channel of a graph carries the occupancy mask.

use condpred_tape::{Graph, Grid, Mat, PoolWindow, Var};

use crate::error::{Error, Result};
use crate::impl_params;
use crate::nn::{Conv, Init, ALPHA};
use crate::scene::{Cell, GridSpec, Point};

/// Cell assignment of positioned items with collisions resolved.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Placement {
    /// `(item index, cell)` for items that won their cell.
    pub placed: Vec<(usize, Cell)>,
    /// Items that lost a collision, with the cell they would occupy.
    pub displaced: Vec<(usize, Cell)>,
}

/// Assigns each `(position, id)` to its grid cell. Items outside the grid
/// are dropped; when two share a cell the one nearer the grid centre wins,
/// ties going to the lower id.
pub fn place(items: &[(Point, u64)], spec: &GridSpec) -> Placement {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .0
            .norm()
            .total_cmp(&items[b].0.norm())
            .then(items[a].1.cmp(&items[b].1))
    });
    let mut taken = vec![false; spec.cells()];
    let mut out = Placement::default();
    for k in order {
        if let Some(cell) = spec.cell_of(items[k].0) {
            let r = spec.index(cell);
            if taken[r] {
                out.displaced.push((k, cell));
            } else {
                taken[r] = true;
                out.placed.push((k, cell));
            }
        }
    }
    out.placed.sort_unstable();
    out.displaced.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SocialTensor {
    /// `HW x D`, row `r` is cell `(r / W, r % W)`.
    pub grid: Mat,
    pub occupancy: Vec<bool>,
}

/// Writes each encoding into its cell; agents outside the grid are dropped.
pub fn scatter(encodings: &[(Vec<f64>, Point)], dim: usize, spec: &GridSpec) -> Result<SocialTensor> {
    spec.validate()?;
    let items: Vec<(Point, u64)> = encodings.iter().enumerate().map(|(k, e)| (e.1, k as u64)).collect();
    let mut grid = Mat::zeros((spec.cells(), dim));
    let mut occupancy = vec![false; spec.cells()];
    for (k, cell) in place(&items, spec).placed {
        let enc = &encodings[k].0;
        if enc.len() != dim {
            return Err(Error::DimensionMismatch(format!("encoding has {} entries, expected {dim}", enc.len())));
        }
        let r = spec.index(cell);
        grid.row_mut(r).assign(&ndarray::ArrayView1::from(enc.as_slice()));
        occupancy[r] = true;
    }
    Ok(SocialTensor { grid, occupancy })
}

/// Social pooling stack: two 3x3 convolutions, a 2x1 stride-1 max-pool and
/// a 1x1 fusion with the broadcast target encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolParams {
    pub conv1: Conv,
    pub conv2: Conv,
    pub fuse: Conv,
}

impl_params!(PoolParams { conv1, conv2, fuse });

impl PoolParams {
    pub fn init(init: &Init, stream: u64, dim: usize) -> Self {
        let mut rng = init.stream(stream);
        Self {
            conv1: Conv::new(3, 3, dim, dim, &mut rng),
            conv2: Conv::new(3, 3, dim, dim, &mut rng),
            fuse: Conv::new(1, 1, 2 * dim, dim, &mut rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.fuse.lin.outputs()
    }

    /// Builds `n` graphs at once. `social` is `(n * HW) x D`, `occupancy`
    /// has one flag per row and `xi` is `n x D`. Returns `(n * HW) x (D + 1)`.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        social: Var,
        occupancy: &[bool],
        xi: Var,
        n: usize,
        spec: &GridSpec,
    ) -> Var {
        let grid = Grid::new(n, spec.rows, spec.cols);
        let hw = spec.cells();
        let x = g.mask_rows(social, occupancy);
        let x = self.conv1.forward(g, x, grid);
        let x = g.leaky_relu(x, ALPHA);
        let x = self.conv2.forward(g, x, grid);
        let x = g.leaky_relu(x, ALPHA);
        let x = g.max_pool(x, grid, PoolWindow::new(2, 1, 1, 1));
        let spread: Vec<usize> = (0..n * hw).map(|r| r / hw).collect();
        let xi_b = g.gather_rows(xi, &spread);
        let both = g.concat_cols(&[x, xi_b]);
        let fused = self.fuse.forward(g, both, grid);
        let fused = g.leaky_relu(fused, ALPHA);
        let occ = g.constant(Mat::from_shape_fn((n * hw, 1), |(r, _)| f64::from(u8::from(occupancy[r]))));
        g.concat_cols(&[fused, occ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntentionGraph {
    /// `HW x (D + 1)`; the last column is occupancy.
    pub tensor: Mat,
    pub rows: usize,
    pub cols: usize,
}

impl IntentionGraph {
    /// `[H, W, D + 1]`.
    pub fn shape(&self) -> [usize; 3] {
        [self.rows, self.cols, self.tensor.ncols()]
    }

    pub fn cell(&self, row: usize, col: usize) -> ndarray::ArrayView1<'_, f64> {
        self.tensor.row(row * self.cols + col)
    }
}

pub fn build_graph(
    target_enc: &[f64],
    social: &SocialTensor,
    params: &PoolParams,
    spec: &GridSpec,
) -> Result<IntentionGraph> {
    let d = params.dim();
    if target_enc.len() != d || social.grid.dim() != (spec.cells(), d) || social.occupancy.len() != spec.cells() {
        return Err(Error::Shape(format!(
            "graph inputs: encoding {} and social {:?}, expected {d} and ({}, {d})",
            target_enc.len(),
            social.grid.dim(),
            spec.cells()
        )));
    }
    let mut g = Graph::new();
    let s = g.constant(social.grid.clone());
    let xi = g.constant(Mat::from_shape_vec((1, d), target_enc.to_vec()).expect("row"));
    let out = params.forward(&mut g, s, &social.occupancy, xi, 1, spec);
    Ok(IntentionGraph {
        tensor: g.value(out).clone(),
        rows: spec.rows,
        cols: spec.cols,
    })
}

/// Current-domain graph from neighbor encodings and positions relative to
/// the target.
pub fn build_current_graph(
    target_enc: &[f64],
    neighbors: &[(Vec<f64>, Point)],
    params: &PoolParams,
    spec: &GridSpec,
) -> Result<IntentionGraph> {
    let social = scatter(neighbors, params.dim(), spec)?;
    build_graph(target_enc, &social, params, spec)
}

/// Future-domain graph holding the single ego-plan encoding at the ego's
/// position relative to the target.
pub fn build_future_graph(
    target_enc: &[f64],
    ego_plan_enc: &[f64],
    ego_rel: Point,
    params: &PoolParams,
    spec: &GridSpec,
) -> Result<IntentionGraph> {
    let social = scatter(&[(ego_plan_enc.to_vec(), ego_rel)], params.dim(), spec)?;
    build_graph(target_enc, &social, params, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fill;

    fn params(dim: usize) -> PoolParams {
        PoolParams::init(&Init::new(3), 10, dim)
    }

    #[test]
    fn empty_scatter_is_zero() {
        let s = scatter(&[], 4, &GridSpec::default()).unwrap();
        assert!(s.grid.iter().all(|&x| x == 0.0));
        assert!(s.occupancy.iter().all(|&o| !o));
    }

    #[test]
    fn ego_sixteen_meters_ahead_occupies_one_forward_cell() {
        let spec = GridSpec::default();
        let s = scatter(&[(vec![1.0; 4], Point::new(16.0, 0.0))], 4, &spec).unwrap();
        let occupied: Vec<usize> = (0..spec.cells()).filter(|&r| s.occupancy[r]).collect();
        // Oracle: 16 m / 2.4384 m = 6.56 cells ahead of the centre row's
        // lower edge offset of 12.5 rows, so row floor(12.5 + 6.56) = 19.
        let row = (16.0 / (8.0 * 0.3048) + 12.5f64).floor() as usize;
        assert_eq!(occupied, vec![row * 5 + 2]);
        assert!(row > 12);
    }

    #[test]
    fn collision_keeps_nearest_agent() {
        let spec = GridSpec::default();
        let near = (vec![1.0; 2], Point::new(0.3, 0.0));
        let far = (vec![2.0; 2], Point::new(0.9, 0.0));
        let s = scatter(&[far.clone(), near.clone()], 2, &spec).unwrap();
        let r = spec.index((12, 2));
        assert_eq!(s.grid.row(r).to_vec(), vec![1.0, 1.0]);
        assert_eq!(s.occupancy.iter().filter(|&&o| o).count(), 1);
        let p = place(&[(far.1, 0), (near.1, 1)], &spec);
        assert_eq!(p.placed, vec![(1, (12, 2))]);
        assert_eq!(p.displaced, vec![(0, (12, 2))]);
    }

    #[test]
    fn graph_shape_and_occupancy_channel() {
        let spec = GridSpec::default();
        let p = params(6);
        let g = build_current_graph(&[0.1; 6], &[(vec![0.5; 6], Point::new(-10.0, 3.0))], &p, &spec).unwrap();
        assert_eq!(g.shape(), [25, 5, 7]);
        let occ: f64 = g.tensor.column(6).sum();
        assert_eq!(occ, 1.0);
        assert!(g.tensor.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn zero_inputs_zero_params_give_zero_graph() {
        let spec = GridSpec::default();
        let mut p = params(4);
        fill(&mut p, 0.0);
        let g = build_current_graph(&[0.0; 4], &[], &p, &spec).unwrap();
        assert!(g.tensor.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unoccupied_cells_are_masked() {
        let spec = GridSpec::default();
        let p = params(4);
        let mut social = scatter(&[(vec![0.3; 4], Point::new(5.0, 0.0))], 4, &spec).unwrap();
        let base = build_graph(&[0.2; 4], &social, &p, &spec).unwrap();
        social.grid.row_mut(0).fill(123.0);
        social.grid.row_mut(spec.cells() - 1).fill(-7.0);
        let perturbed = build_graph(&[0.2; 4], &social, &p, &spec).unwrap();
        assert_eq!(base, perturbed);
    }

    #[test]
    fn out_of_grid_agents_change_nothing() {
        let spec = GridSpec::default();
        let p = params(4);
        let a = build_current_graph(&[0.2; 4], &[(vec![0.3; 4], Point::new(5.0, 0.0))], &p, &spec).unwrap();
        let b = build_current_graph(
            &[0.2; 4],
            &[(vec![0.3; 4], Point::new(5.0, 0.0)), (vec![9.0; 4], Point::new(45.0, 0.0))],
            &p,
            &spec,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn future_graph_accepts_any_plan_encoding() {
        let spec = GridSpec::default();
        let p = params(4);
        let g = build_future_graph(&[0.1; 4], &[0.4; 4], Point::new(20.0, 0.0), &p, &spec).unwrap();
        assert_eq!(g.shape(), [25, 5, 5]);
        assert!(build_future_graph(&[0.1; 3], &[0.4; 4], Point::ORIGIN, &p, &spec).is_err());
    }
}
