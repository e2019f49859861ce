//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every value on the tape is a 2-D matrix. Row vectors are `1 x n`,
//! scalars are `1 x 1`, and spatial grids of `h x w` cells with `c`
//! channels are stored as `(h * w) x c` matrices in row-major cell order
//! (cell `(i, j)` lives in row `i * w + j`). Batches of grids are stacked
//! along the row axis.
//!
//! Parameters are borrowed into the tape without copying; the gradient of a
//! parameter is looked up by the address of the matrix that was bound.
//!
//! ```
//! use condpred_tape::{Graph, Mat};
//! use ndarray::array;
//!
//! let w: Mat = array![[2.0], [3.0]];
//! let mut g = Graph::new();
//! let x = g.constant(array![[1.0, 1.0]]);
//! let wv = g.param(&w);
//! let y = g.matmul(x, wv);
//! let loss = g.sum_all(y);
//! let grads = g.backward(loss);
//! assert_eq!(grads.param(&w).unwrap(), &array![[1.0], [1.0]]);
//! ```

mod geometry;
mod graph;

pub use geometry::{Grid, Kernel, PoolWindow};
pub use graph::{Gradients, Graph, Var};

pub type Mat = ndarray::Array2<f64>;
