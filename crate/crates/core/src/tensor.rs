//! Dense row-major n-dimensional arrays of scalars.
//!
//! Tensors are immutable values: every operation returns a fresh tensor.
//! The FFT kernels in [`crate::fourier`] mutate flat slices in place, but
//! they are documented as such and operate on buffers they own.

use crate::{Error, Result};

/// A dense tensor. `data` is row-major: the last axis is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    /// Builds a tensor, validating that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Shape("tensor rank must be at least 1".into()));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides of the current shape.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Value at a multi-index; panics on out-of-range (internal misuse).
    pub fn at(&self, idx: &[usize]) -> T {
        debug_assert_eq!(idx.len(), self.rank());
        let flat: usize = idx
            .iter()
            .zip(self.strides())
            .map(|(&i, s)| i * s)
            .sum();
        self.data[flat]
    }

    /// Zero-pads into the low corner of `target`. Each target extent must be
    /// a power of two and at least the source extent.
    pub fn pad_to_pow2(&self, target: &[usize], zero: T) -> Result<Self> {
        if target.len() != self.rank() {
            return Err(Error::Shape(format!(
                "pad target rank {} differs from tensor rank {}",
                target.len(),
                self.rank()
            )));
        }
        for (&t, &s) in target.iter().zip(&self.shape) {
            if !t.is_power_of_two() {
                return Err(Error::NotPowerOfTwo(t));
            }
            if t < s {
                return Err(Error::Shape(format!(
                    "pad target {target:?} smaller than source {:?}",
                    self.shape
                )));
            }
        }
        let mut out = Tensor::filled(target.to_vec(), zero)?;
        copy_block(
            &self.data,
            &self.shape,
            &mut out.data,
            target,
            &vec![0; target.len()],
        );
        Ok(out)
    }

    /// The sub-block starting at `lo` with extents `extents`.
    pub fn crop(&self, lo: &[usize], extents: &[usize]) -> Result<Self> {
        if lo.len() != self.rank() || extents.len() != self.rank() {
            return Err(Error::Shape("crop rank mismatch".into()));
        }
        for a in 0..self.rank() {
            if extents[a] == 0 || lo[a] + extents[a] > self.shape[a] {
                return Err(Error::Shape(format!(
                    "crop [{lo:?}; {extents:?}] outside shape {:?}",
                    self.shape
                )));
            }
        }
        let mut out = Vec::with_capacity(extents.iter().product());
        let src_strides = self.strides();
        let mut idx = vec![0usize; self.rank()];
        loop {
            let flat: usize = idx
                .iter()
                .zip(&src_strides)
                .zip(lo)
                .map(|((&i, &s), &l)| (i + l) * s)
                .sum();
            out.push(self.data[flat]);
            if !advance(&mut idx, extents) {
                break;
            }
        }
        Tensor::new(extents.to_vec(), out)
    }

    /// Treats axes `[0, split)` as one flattened row index R and axes
    /// `[split, rank)` as one flattened column index C, transposes the
    /// resulting R x C matrix, and reports the result with axis order
    /// `[split.., ..split]`. `rotate_axes_flat(d - 1)` therefore moves the
    /// last axis to the front.
    pub fn rotate_axes_flat(&self, split: usize) -> Result<Self> {
        if split == 0 || split >= self.rank() {
            return Err(Error::Shape(format!(
                "rotate split {split} outside 1..{}",
                self.rank()
            )));
        }
        let rows: usize = self.shape[..split].iter().product();
        let cols: usize = self.shape[split..].iter().product();
        let mut out = self.data.clone();
        transpose_rc(&self.data, &mut out, rows, cols);
        let mut shape = self.shape[split..].to_vec();
        shape.extend_from_slice(&self.shape[..split]);
        Tensor::new(shape, out)
    }

    /// Reverses the index order along every axis:
    /// `out[i, j, ..] = in[n0-1-i, n1-1-j, ..]`.
    pub fn reversed(&self) -> Self {
        let strides = self.strides();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; self.rank()];
        loop {
            let flat: usize = idx
                .iter()
                .zip(&strides)
                .zip(&self.shape)
                .map(|((&i, &s), &e)| (e - 1 - i) * s)
                .sum();
            out.push(self.data[flat]);
            if !advance(&mut idx, &self.shape) {
                break;
            }
        }
        Tensor { shape: self.shape.clone(), data: out }
    }

    /// Reorders axes: output axis `a` is input axis `perm[a]`, so
    /// `out.at(&i) == in.at(&[i[inv[0]], ..])` with `inv` the inverse
    /// permutation. `perm` must be a permutation of `0..rank`.
    pub fn permute_axes(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Shape(format!(
                "axis order {perm:?} is not a permutation of 0..{rank}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&a| self.shape[a]).collect();
        let src_strides = self.strides();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        loop {
            let flat: usize = idx
                .iter()
                .zip(perm)
                .map(|(&i, &a)| i * src_strides[a])
                .sum();
            out.push(self.data[flat]);
            if !advance(&mut idx, &out_shape) {
                break;
            }
        }
        Tensor::new(out_shape, out)
    }
}

/// Combines two same-shape tensors elementwise.
pub fn elementwise<T: Copy>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "elementwise on {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| op(x, y))
        .collect();
    Tensor::new(a.shape.clone(), data)
}

/// Maps a scalar function over every element.
pub fn map<T: Copy>(a: &Tensor<T>, op: impl Fn(T) -> T) -> Tensor<T> {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| op(x)).collect(),
    }
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

/// Advances a row-major multi-index; returns false after the last index.
pub fn advance(idx: &mut [usize], shape: &[usize]) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < shape[a] {
            return true;
        }
        idx[a] = 0;
    }
    false
}

/// Copies `src` (shape `src_shape`) into `dst` (shape `dst_shape`) at offset
/// `at`. Caller guarantees the block fits.
fn copy_block<T: Copy>(
    src: &[T],
    src_shape: &[usize],
    dst: &mut [T],
    dst_shape: &[usize],
    at: &[usize],
) {
    let dst_strides = strides_of(dst_shape);
    let mut idx = vec![0usize; src_shape.len()];
    let mut flat_src = 0usize;
    loop {
        let flat_dst: usize = idx
            .iter()
            .zip(&dst_strides)
            .zip(at)
            .map(|((&i, &s), &o)| (i + o) * s)
            .sum();
        dst[flat_dst] = src[flat_src];
        flat_src += 1;
        if !advance(&mut idx, src_shape) {
            break;
        }
    }
}

/// Base tile of the recursive transpose; 16 x 16 doubles sit comfortably in
/// one level of cache.
const TRANSPOSE_BASE: usize = 16;

/// Cache-oblivious out-of-place transpose of a `rows x cols` row-major
/// matrix into a `cols x rows` row-major matrix.
pub fn transpose_rc<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    transpose_rec(src, dst, rows, cols, 0, rows, 0, cols);
}

fn transpose_rec<T: Copy>(
    src: &[T],
    dst: &mut [T],
    rows: usize,
    cols: usize,
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
) {
    let dr = r1 - r0;
    let dc = c1 - c0;
    if dr <= TRANSPOSE_BASE && dc <= TRANSPOSE_BASE {
        for r in r0..r1 {
            for c in c0..c1 {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    } else if dr >= dc {
        let rm = r0 + dr / 2;
        transpose_rec(src, dst, rows, cols, r0, rm, c0, c1);
        transpose_rec(src, dst, rows, cols, rm, r1, c0, c1);
    } else {
        let cm = c0 + dc / 2;
        transpose_rec(src, dst, rows, cols, r0, r1, c0, cm);
        transpose_rec(src, dst, rows, cols, r0, r1, cm, c1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn pad_appends_zeros_in_one_dimension() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        let p = x.pad_to_pow2(&[4], 0.0).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn pad_fills_high_corner_rows() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = x.pad_to_pow2(&[2, 4], 0.0).unwrap();
        assert_eq!(p.shape(), &[2, 4]);
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 0.0, 4.0, 5.0, 6.0, 0.0]);
    }

    #[test]
    fn pad_rejects_shrinking_and_non_pow2() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        assert!(matches!(
            x.pad_to_pow2(&[2], 0.0),
            Err(Error::NotPowerOfTwo(2)) | Err(Error::Shape(_))
        ));
        assert!(matches!(
            x.pad_to_pow2(&[6], 0.0),
            Err(Error::NotPowerOfTwo(6))
        ));
    }

    #[test]
    fn rotate_moves_last_axis_to_front() {
        // Shape [2, 3]: transpose.
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = x.rotate_axes_flat(1).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn rotate_cube_matches_index_permutation() {
        // out[z][x][y] == in[x][y][z] for the full [2, 2, 2] cube.
        let data: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let x = t(&[2, 2, 2], &data);
        let r = x.rotate_axes_flat(2).unwrap();
        for xi in 0..2 {
            for yi in 0..2 {
                for zi in 0..2 {
                    assert_eq!(r.at(&[zi, xi, yi]), x.at(&[xi, yi, zi]));
                }
            }
        }
    }

    #[test]
    fn rotate_full_cycle_is_identity() {
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let x = t(&[2, 3, 4], &data);
        let mut r = x.clone();
        for _ in 0..3 {
            r = r.rotate_axes_flat(2).unwrap();
        }
        assert_eq!(r, x);
    }

    #[test]
    fn rotate_then_counter_rotate_is_identity() {
        let data: Vec<f64> = (0..30).map(|v| v as f64).collect();
        let x = t(&[2, 3, 5], &data);
        let once = x.rotate_axes_flat(2).unwrap();
        let back = once.rotate_axes_flat(1).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn pad_then_crop_recovers_original() {
        let x = t(&[3, 5], &(0..15).map(|v| v as f64).collect::<Vec<_>>());
        let p = x.pad_to_pow2(&[4, 8], 0.0).unwrap();
        let c = p.crop(&[0, 0], &[3, 5]).unwrap();
        assert_eq!(c, x);
    }

    #[test]
    fn elementwise_requires_matching_shapes() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[3], &[1.0, 2.0, 3.0]);
        assert!(elementwise(&a, &b, |x, y| x + y).is_err());
    }

    #[test]
    fn elementwise_max_and_add_commute_with_pad() {
        let a = t(&[3], &[1.0, 5.0, 2.0]);
        let b = t(&[3], &[4.0, 0.5, 2.0]);
        for op in [f64::max, |x: f64, y: f64| x + y] {
            let padded = elementwise(
                &a.pad_to_pow2(&[4], 0.0).unwrap(),
                &b.pad_to_pow2(&[4], 0.0).unwrap(),
                op,
            )
            .unwrap();
            let unpadded = elementwise(&a, &b, op)
                .unwrap()
                .pad_to_pow2(&[4], 0.0)
                .unwrap();
            assert_eq!(padded, unpadded);
        }
    }

    #[test]
    fn large_transpose_round_trips() {
        // Exercises the recursive tiling well past the base tile.
        let rows = 53;
        let cols = 97;
        let data: Vec<f64> = (0..rows * cols).map(|v| v as f64).collect();
        let x = t(&[rows, cols], &data);
        let r = x.rotate_axes_flat(1).unwrap().rotate_axes_flat(1).unwrap();
        assert_eq!(r, x);
    }
}

#[cfg(test)]
mod permute_tests {
    use super::*;

    #[test]
    fn reversed_flips_every_axis() {
        let t = Tensor::new(vec![2, 3], vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(t.reversed().data(), &[6, 5, 4, 3, 2, 1]);
        assert_eq!(t.reversed().reversed().data(), t.data());
    }

    #[test]
    fn permute_axes_moves_data() {
        let t = Tensor::new(vec![2, 3], vec![1, 2, 3, 4, 5, 6]).unwrap();
        let p = t.permute_axes(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1, 4, 2, 5, 3, 6]);

        let c = Tensor::new(vec![2, 3, 4], (0..24).collect()).unwrap();
        let q = c.permute_axes(&[2, 0, 1]).unwrap();
        assert_eq!(q.shape(), &[4, 2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(q.at(&[k, i, j]), c.at(&[i, j, k]));
                }
            }
        }
        assert!(c.permute_axes(&[0, 0, 1]).is_err());
    }
}
