use crate::Mat;

/// Layout of a batch of spatial grids stored as a `(batch * h * w) x c` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn new(batch: usize, h: usize, w: usize) -> Self {
        Self { batch, h, w }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn rows(&self) -> usize {
        self.batch * self.h * self.w
    }
}

/// Odd-sized convolution kernel with same-padding and stride 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Kernel {
    pub kh: usize,
    pub kw: usize,
}

impl Kernel {
    pub fn new(kh: usize, kw: usize) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel sides must be odd");
        Self { kh, kw }
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }
}

/// Max-pool window. Output cell `(i, j)` covers input rows
/// `[i * sh, i * sh + ph)` and columns `[j * sw, j * sw + pw)`, clipped to
/// the grid; the output has `ceil(h / sh) x ceil(w / sw)` cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolWindow {
    pub ph: usize,
    pub pw: usize,
    pub sh: usize,
    pub sw: usize,
}

impl PoolWindow {
    pub fn new(ph: usize, pw: usize, sh: usize, sw: usize) -> Self {
        assert!(ph > 0 && pw > 0 && sh > 0 && sw > 0);
        Self { ph, pw, sh, sw }
    }

    pub fn output(&self, grid: Grid) -> Grid {
        Grid::new(grid.batch, grid.h.div_ceil(self.sh), grid.w.div_ceil(self.sw))
    }
}

pub(crate) fn im2col(x: &Mat, grid: Grid, k: Kernel) -> Mat {
    let c = x.ncols();
    assert_eq!(x.nrows(), grid.rows(), "im2col: row count does not match grid");
    let mut out = Mat::zeros((grid.rows(), k.taps() * c));
    let (rh, rw) = ((k.kh / 2) as isize, (k.kw / 2) as isize);
    for b in 0..grid.batch {
        for i in 0..grid.h {
            for j in 0..grid.w {
                let row = (b * grid.h + i) * grid.w + j;
                for di in 0..k.kh {
                    let si = i as isize + di as isize - rh;
                    if si < 0 || si >= grid.h as isize {
                        continue;
                    }
                    for dj in 0..k.kw {
                        let sj = j as isize + dj as isize - rw;
                        if sj < 0 || sj >= grid.w as isize {
                            continue;
                        }
                        let src = (b * grid.h + si as usize) * grid.w + sj as usize;
                        let off = (di * k.kw + dj) * c;
                        for ch in 0..c {
                            out[[row, off + ch]] = x[[src, ch]];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn im2col_backward(g: &Mat, grid: Grid, k: Kernel, c: usize) -> Mat {
    let mut dx = Mat::zeros((grid.rows(), c));
    let (rh, rw) = ((k.kh / 2) as isize, (k.kw / 2) as isize);
    for b in 0..grid.batch {
        for i in 0..grid.h {
            for j in 0..grid.w {
                let row = (b * grid.h + i) * grid.w + j;
                for di in 0..k.kh {
                    let si = i as isize + di as isize - rh;
                    if si < 0 || si >= grid.h as isize {
                        continue;
                    }
                    for dj in 0..k.kw {
                        let sj = j as isize + dj as isize - rw;
                        if sj < 0 || sj >= grid.w as isize {
                            continue;
                        }
                        let src = (b * grid.h + si as usize) * grid.w + sj as usize;
                        let off = (di * k.kw + dj) * c;
                        for ch in 0..c {
                            dx[[src, ch]] += g[[row, off + ch]];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Returns the pooled matrix and, per output entry, the flat input index
/// (`row * c + ch`) that won. Ties go to the first index in scan order.
pub(crate) fn max_pool(x: &Mat, grid: Grid, win: PoolWindow) -> (Mat, Vec<usize>) {
    let c = x.ncols();
    assert_eq!(x.nrows(), grid.rows(), "max_pool: row count does not match grid");
    let og = win.output(grid);
    let mut out = Mat::zeros((og.rows(), c));
    let mut arg = vec![0usize; og.rows() * c];
    for b in 0..grid.batch {
        for oi in 0..og.h {
            for oj in 0..og.w {
                let orow = (b * og.h + oi) * og.w + oj;
                let i_end = (oi * win.sh + win.ph).min(grid.h);
                let j_end = (oj * win.sw + win.pw).min(grid.w);
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for i in oi * win.sh..i_end {
                        for j in oj * win.sw..j_end {
                            let r = (b * grid.h + i) * grid.w + j;
                            let v = x[[r, ch]];
                            if best_idx == usize::MAX || v > best {
                                best = v;
                                best_idx = r * c + ch;
                            }
                        }
                    }
                    out[[orow, ch]] = best;
                    arg[orow * c + ch] = best_idx;
                }
            }
        }
    }
    (out, arg)
}
