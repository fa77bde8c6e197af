//! Radix-2 fast Fourier transforms.
//!
//! Two butterfly orders are provided: decimation in time (consumes
//! bit-reversed order, emits natural order) and decimation in frequency
//! (consumes natural order, emits bit-reversed order). Pairing a DIF
//! forward pass with a DIT inverse pass lets convolution skip both
//! shuffles, because the two spectra are identically permuted when they
//! are multiplied pointwise. The n-dimensional transform plays the same
//! trick with axis rotations: with `undo_transposes = false` the output
//! axes are left in reversed order, and a matching inverse call restores
//! the original order.

use num_complex::Complex64;

use crate::tensor::{strides_of, transpose_rc, Tensor};
use crate::{Error, Result};

/// Complex scalar used throughout the spectral kernels.
pub type ComplexValue = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftVariant {
    DecimationInTime,
    DecimationInFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftDirection {
    Forward,
    Inverse,
}

/// Options accepted by every transform entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FftOptions {
    pub variant: FftVariant,
    /// When false, the bit-reversal permutation is skipped: DIF emits a
    /// permuted spectrum and DIT expects one.
    pub do_shuffle: bool,
    /// n-d only: when false, the axis rotations interleaved with the row
    /// transforms are not undone and the result has reversed axis order.
    pub undo_transposes: bool,
    pub direction: FftDirection,
}

impl FftOptions {
    pub fn forward() -> Self {
        FftOptions {
            variant: FftVariant::DecimationInTime,
            do_shuffle: true,
            undo_transposes: true,
            direction: FftDirection::Forward,
        }
    }

    pub fn inverse() -> Self {
        FftOptions {
            direction: FftDirection::Inverse,
            ..FftOptions::forward()
        }
    }

    pub fn variant(mut self, variant: FftVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn shuffle(mut self, yes: bool) -> Self {
        self.do_shuffle = yes;
        self
    }

    pub fn transposes(mut self, yes: bool) -> Self {
        self.undo_transposes = yes;
        self
    }
}

/// Transform length capacity: lengths above `2^max_log_n` are refused
/// before any allocation happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxLogLen(u8);

impl MaxLogLen {
    pub fn new(max_log_n: u8) -> Result<Self> {
        if (1..=63).contains(&max_log_n) {
            Ok(MaxLogLen(max_log_n))
        } else {
            Err(Error::Domain(format!(
                "max_log_n {max_log_n} outside 1..=63"
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn admits(self, len: usize) -> bool {
        len.ilog2() <= u32::from(self.0)
    }
}

impl Default for MaxLogLen {
    fn default() -> Self {
        MaxLogLen(32)
    }
}

fn check_len(len: usize, cap: MaxLogLen) -> Result<u32> {
    if !len.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(len));
    }
    if !cap.admits(len) {
        return Err(Error::FftCapacity {
            len,
            max_log_n: cap.get(),
        });
    }
    Ok(len.ilog2())
}

/// Applies the bit-reversal permutation in place. The permutation is an
/// involution, so applying it twice restores the input.
pub fn bit_reverse_permute<T>(x: &mut [T]) -> Result<()> {
    let n = x.len();
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let log = n.ilog2();
    if log == 0 {
        return Ok(());
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - log);
        if i < j {
            x.swap(i, j);
        }
    }
    Ok(())
}

/// One step of the numerically stable twiddle recurrence
/// `e^{-i(a+1)t} = e^{-iat} + e^{-iat} (e^{-it} - 1)`.
///
/// Storing `delta_minus_one = e^{-it} - 1` instead of `e^{-it}` keeps the
/// update's significant digits when `t` is tiny: near zero the multiplier
/// `e^{-it}` is dominated by its constant 1, while `e^{-it} - 1` retains a
/// full mantissa of the small angle.
pub fn twiddle_advance(current: ComplexValue, delta_minus_one: ComplexValue) -> ComplexValue {
    current + current * delta_minus_one
}

/// Recurrence steps between refreshes from direct trigonometry. The
/// recurrence drifts by roughly one ulp per step, so the interval bounds
/// the twiddle error at a few tens of ulps while keeping the trig call
/// count at one per 64 table entries.
const TWIDDLE_REFRESH: u64 = 64;

/// Generates `count` twiddles `e^{sign * i * step * k}` for `k = 0..count`.
fn twiddle_table(count: usize, step: f64, sign: f64) -> Vec<ComplexValue> {
    let delta_minus_one = ComplexValue::new(
        (step * sign).cos() - 1.0,
        (step * sign).sin(),
    );
    let mut table = Vec::with_capacity(count);
    let mut cur = ComplexValue::new(1.0, 0.0);
    for k in 0..count as u64 {
        if k > 0 {
            cur = if k % TWIDDLE_REFRESH == 0 {
                let angle = step * sign * k as f64;
                ComplexValue::new(angle.cos(), angle.sin())
            } else {
                twiddle_advance(cur, delta_minus_one)
            };
        }
        table.push(cur);
    }
    table
}

/// In-place 1D transform with the default capacity.
pub fn fft_1d(x: &mut [ComplexValue], opts: &FftOptions) -> Result<()> {
    fft_1d_with_capacity(x, opts, MaxLogLen::default())
}

/// In-place 1D transform with an explicit capacity bound.
pub fn fft_1d_with_capacity(
    x: &mut [ComplexValue],
    opts: &FftOptions,
    cap: MaxLogLen,
) -> Result<()> {
    let n = x.len();
    let log = check_len(n, cap)?;
    if log == 0 {
        return Ok(());
    }
    let sign = match opts.direction {
        FftDirection::Forward => -1.0,
        FftDirection::Inverse => 1.0,
    };
    let table = twiddle_table(n / 2, std::f64::consts::TAU / n as f64, sign);
    match opts.variant {
        FftVariant::DecimationInTime => {
            if opts.do_shuffle {
                bit_reverse_permute(x)?;
            }
            dit_butterflies(x, &table);
        }
        FftVariant::DecimationInFrequency => {
            dif_butterflies(x, &table);
            if opts.do_shuffle {
                bit_reverse_permute(x)?;
            }
        }
    }
    if opts.direction == FftDirection::Inverse {
        let scale = 1.0 / n as f64;
        for v in x.iter_mut() {
            *v *= scale;
        }
    }
    Ok(())
}

/// DIT passes: block size grows 2, 4, ..., n; input in bit-reversed order.
fn dit_butterflies(x: &mut [ComplexValue], table: &[ComplexValue]) {
    let n = x.len();
    let mut m = 2;
    while m <= n {
        let half = m / 2;
        let stride = n / m;
        let mut b = 0;
        while b < n {
            for j in 0..half {
                let w = table[j * stride];
                let lo = b + j;
                let hi = lo + half;
                let t = w * x[hi];
                let u = x[lo];
                x[lo] = u + t;
                x[hi] = u - t;
            }
            b += m;
        }
        m *= 2;
    }
}

/// DIF passes: block size shrinks n, ..., 4, 2; output in bit-reversed order.
fn dif_butterflies(x: &mut [ComplexValue], table: &[ComplexValue]) {
    let n = x.len();
    let mut m = n;
    while m >= 2 {
        let half = m / 2;
        let stride = n / m;
        let mut b = 0;
        while b < n {
            for j in 0..half {
                let w = table[j * stride];
                let lo = b + j;
                let hi = lo + half;
                let u = x[lo];
                let v = x[hi];
                x[lo] = u + v;
                x[hi] = (u - v) * w;
            }
            b += m;
        }
        m /= 2;
    }
}

/// Forward transform of a real signal, returning the `n/2 + 1` unique bins.
///
/// The signal is packed into a half-length complex vector
/// `[x0 + i x1, x2 + i x3, ...]`, transformed, and unpacked by undoing the
/// final butterfly analytically. This path keeps its shuffles: the
/// unpacking pairs bins `k` and `n/2 - k`, which is only convenient in
/// natural order.
pub fn fft_1d_real(x: &[f64]) -> Result<Vec<ComplexValue>> {
    let n = x.len();
    check_len(n, MaxLogLen::default())?;
    if n == 1 {
        return Ok(vec![ComplexValue::new(x[0], 0.0)]);
    }
    let m = n / 2;
    let mut z: Vec<ComplexValue> = (0..m)
        .map(|k| ComplexValue::new(x[2 * k], x[2 * k + 1]))
        .collect();
    fft_1d(&mut z, &FftOptions::forward())?;
    let w = twiddle_table(m + 1, std::f64::consts::TAU / n as f64, -1.0);
    let mut out = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let zk = z[k % m];
        let zr = z[(m - k) % m].conj();
        let a = 0.5 * (zk + zr);
        let b = 0.5 * (zk - zr);
        out.push(a - ComplexValue::i() * w[k] * b);
    }
    Ok(out)
}

/// Inverse of [`fft_1d_real`]: consumes `n/2 + 1` bins, returns `n` reals.
pub fn ifft_1d_real(spectrum: &[ComplexValue]) -> Result<Vec<f64>> {
    if spectrum.len() < 2 {
        return match spectrum.len() {
            1 => Ok(vec![spectrum[0].re]),
            _ => Err(Error::Shape("empty spectrum".into())),
        };
    }
    let m = spectrum.len() - 1;
    let n = 2 * m;
    check_len(n, MaxLogLen::default())?;
    let w = twiddle_table(m + 1, std::f64::consts::TAU / n as f64, 1.0);
    let mut z = Vec::with_capacity(m);
    for k in 0..m {
        let xk = spectrum[k];
        let xr = spectrum[m - k].conj();
        let a = 0.5 * (xk + xr);
        let b = 0.5 * (xk - xr);
        z.push(a + ComplexValue::i() * w[k] * b);
    }
    fft_1d(&mut z, &FftOptions::inverse())?;
    let mut out = Vec::with_capacity(n);
    for v in z {
        out.push(v.re);
        out.push(v.im);
    }
    Ok(out)
}

/// n-dimensional transform by rows and rotations.
///
/// Each pass transforms the contiguous last axis, then rotates that axis to
/// the front of the not-yet-transformed group. With
/// `undo_transposes = true` the rotation spans all axes, so after `rank`
/// passes the cycle closes and the axes come back in their original order.
/// With `undo_transposes = false` the final rotation of each pass is elided
/// and the result's axes are in reversed order; running the matching
/// inverse options on that result restores both values and axis order.
pub fn fft_nd(t: &Tensor<ComplexValue>, opts: &FftOptions) -> Result<Tensor<ComplexValue>> {
    fft_nd_with_capacity(t, opts, MaxLogLen::default())
}

pub fn fft_nd_with_capacity(
    t: &Tensor<ComplexValue>,
    opts: &FftOptions,
    cap: MaxLogLen,
) -> Result<Tensor<ComplexValue>> {
    for &e in t.shape() {
        check_len(e, cap)?;
    }
    let rank = t.rank();
    let mut cur = t.clone();
    for pass in 0..rank {
        fft_rows(&mut cur, opts, cap)?;
        if opts.undo_transposes {
            if rank > 1 {
                cur = rotate_batched(&cur, 0)?;
            }
        } else if pass + 1 < rank {
            cur = rotate_batched(&cur, pass)?;
        }
    }
    Ok(cur)
}

/// Transforms every contiguous row (last axis) in place.
fn fft_rows(t: &mut Tensor<ComplexValue>, opts: &FftOptions, cap: MaxLogLen) -> Result<()> {
    let row = *t.shape().last().expect("rank >= 1");
    for chunk in t.data_mut().chunks_mut(row) {
        fft_1d_with_capacity(chunk, opts, cap)?;
    }
    Ok(())
}

/// Moves the last axis to the front of the trailing group, keeping the
/// first `batch` axes fixed: `(b.., r.., c) -> (b.., c, r..)`.
fn rotate_batched(t: &Tensor<ComplexValue>, batch: usize) -> Result<Tensor<ComplexValue>> {
    let rank = t.rank();
    debug_assert!(batch + 1 < rank);
    let shape = t.shape();
    let b: usize = shape[..batch].iter().product();
    let rows: usize = shape[batch..rank - 1].iter().product();
    let cols = shape[rank - 1];
    let mut data = t.data().to_vec();
    let block = rows * cols;
    for i in 0..b {
        transpose_rc(
            &t.data()[i * block..(i + 1) * block],
            &mut data[i * block..(i + 1) * block],
            rows,
            cols,
        );
    }
    let mut new_shape = shape[..batch].to_vec();
    new_shape.push(cols);
    new_shape.extend_from_slice(&shape[batch..rank - 1]);
    Tensor::new(new_shape, data)
}

/// Index strides for reading an nd-transform result produced with
/// `undo_transposes = false`: axis `a` of the logical tensor lives at
/// reversed position `rank - 1 - a`.
pub fn reversed_axis_strides(original_shape: &[usize]) -> Vec<usize> {
    let rev: Vec<usize> = original_shape.iter().rev().copied().collect();
    let s = strides_of(&rev);
    (0..original_shape.len()).map(|a| s[original_shape.len() - 1 - a]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f64 = std::f64::consts::TAU;

    fn cv(re: f64, im: f64) -> ComplexValue {
        ComplexValue::new(re, im)
    }

    fn close(a: ComplexValue, b: ComplexValue, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    /// Naive DFT oracle, O(n^2), shares nothing with the kernels.
    fn dft_oracle(x: &[ComplexValue]) -> Vec<ComplexValue> {
        let n = x.len();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|t| {
                        let ang = -TAU * (k * t) as f64 / n as f64;
                        x[t] * cv(ang.cos(), ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn rand_signal(n: usize, seed: u64) -> Vec<ComplexValue> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| cv(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn bit_reverse_eight() {
        let mut x: Vec<u32> = (0..8).collect();
        bit_reverse_permute(&mut x).unwrap();
        assert_eq!(x, [0, 4, 2, 6, 1, 5, 3, 7]);
    }

    #[test]
    fn bit_reverse_trivial_and_errors() {
        let mut one = [7u8];
        bit_reverse_permute(&mut one).unwrap();
        assert_eq!(one, [7]);
        let mut three = [1u8, 2, 3];
        assert!(matches!(
            bit_reverse_permute(&mut three),
            Err(Error::NotPowerOfTwo(3))
        ));
    }

    #[test]
    fn bit_reverse_is_involution() {
        for log in 0..10 {
            let n = 1usize << log;
            let mut x: Vec<usize> = (0..n).collect();
            bit_reverse_permute(&mut x).unwrap();
            bit_reverse_permute(&mut x).unwrap();
            assert!(x.iter().enumerate().all(|(i, &v)| i == v));
        }
    }

    #[test]
    fn twiddle_advance_half_turn() {
        // theta = pi: delta_minus_one = e^{-i pi} - 1 = -2; 1 advances to -1.
        let delta = cv(-2.0, 0.0);
        let next = twiddle_advance(cv(1.0, 0.0), delta);
        assert!(close(next, cv(-1.0, 0.0), 1e-15));
    }

    #[test]
    fn twiddle_sequence_matches_trig_for_n4() {
        let table = twiddle_table(4, TAU / 4.0, -1.0);
        let expect = [cv(1.0, 0.0), cv(0.0, -1.0), cv(-1.0, 0.0), cv(0.0, 1.0)];
        for (got, want) in table.iter().zip(expect) {
            assert!(close(*got, want, 1e-12));
        }
    }

    #[test]
    fn twiddle_recurrence_stays_stable_over_many_steps() {
        // Quarter turn of a 2^20-point table must land on -i.
        let n = 1usize << 20;
        let table = twiddle_table(n / 4 + 1, TAU / n as f64, -1.0);
        assert!(close(table[n / 4], cv(0.0, -1.0), 1e-8));
    }

    #[test]
    fn fft_of_constant_concentrates_at_dc() {
        let mut x = vec![cv(1.0, 0.0); 4];
        fft_1d(&mut x, &FftOptions::forward()).unwrap();
        assert!(close(x[0], cv(4.0, 0.0), 1e-12));
        for &v in &x[1..] {
            assert!(close(v, cv(0.0, 0.0), 1e-12));
        }
    }

    #[test]
    fn fft_of_delta_is_flat() {
        for variant in [FftVariant::DecimationInTime, FftVariant::DecimationInFrequency] {
            let mut x = vec![cv(0.0, 0.0); 8];
            x[0] = cv(1.0, 0.0);
            fft_1d(&mut x, &FftOptions::forward().variant(variant)).unwrap();
            assert!(x.iter().all(|&v| close(v, cv(1.0, 0.0), 1e-12)));
        }
    }

    #[test]
    fn both_variants_match_the_dft_oracle() {
        let x = rand_signal(64, 11);
        let want = dft_oracle(&x);
        for variant in [FftVariant::DecimationInTime, FftVariant::DecimationInFrequency] {
            let mut got = x.clone();
            fft_1d(&mut got, &FftOptions::forward().variant(variant)).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!(close(*g, *w, 1e-9));
            }
        }
    }

    #[test]
    fn round_trip_at_1024_is_tight() {
        let x = rand_signal(1024, 5);
        let mut y = x.clone();
        fft_1d(&mut y, &FftOptions::forward()).unwrap();
        fft_1d(&mut y, &FftOptions::inverse()).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!(close(*a, *b, 1e-10));
        }
    }

    #[test]
    fn parseval_holds() {
        for log in [1usize, 4, 10, 14] {
            let n = 1 << log;
            let x = rand_signal(n, log as u64);
            let mut y = x.clone();
            fft_1d(&mut y, &FftOptions::forward()).unwrap();
            let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            let freq: f64 = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            assert!((time - freq).abs() <= 1e-9 * time);
        }
    }

    #[test]
    fn real_fft_basic_bins() {
        let flat = fft_1d_real(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(flat.len(), 3);
        assert!(close(flat[0], cv(4.0, 0.0), 1e-12));
        assert!(close(flat[1], cv(0.0, 0.0), 1e-12));
        assert!(close(flat[2], cv(0.0, 0.0), 1e-12));

        let nyq = fft_1d_real(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert!(close(nyq[0], cv(0.0, 0.0), 1e-12));
        assert!(close(nyq[1], cv(0.0, 0.0), 1e-12));
        assert!(close(nyq[2], cv(4.0, 0.0), 1e-12));
    }

    #[test]
    fn real_fft_matches_complex_path_at_4096() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let x: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let half = fft_1d_real(&x).unwrap();
        let mut full: Vec<ComplexValue> = x.iter().map(|&v| cv(v, 0.0)).collect();
        fft_1d(&mut full, &FftOptions::forward()).unwrap();
        for k in 0..=2048 {
            assert!(close(half[k], full[k], 1e-10));
        }
        // Conjugate symmetry of the full spectrum of a real signal.
        for k in 1..2048 {
            assert!(close(full[4096 - k], full[k].conj(), 1e-10));
        }
    }

    #[test]
    fn real_fft_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [2usize, 8, 64, 512] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let back = ifft_1d_real(&fft_1d_real(&x).unwrap()).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let mut x = vec![cv(0.0, 0.0); 16];
        let tiny = MaxLogLen::new(3).unwrap();
        assert!(matches!(
            fft_1d_with_capacity(&mut x, &FftOptions::forward(), tiny),
            Err(Error::FftCapacity { len: 16, max_log_n: 3 })
        ));
        assert!(MaxLogLen::new(0).is_err());
        assert!(MaxLogLen::new(64).is_err());
    }

    #[test]
    fn nd_constant_concentrates_at_origin() {
        let t = Tensor::filled(vec![4, 4], cv(1.0, 0.0)).unwrap();
        let f = fft_nd(&t, &FftOptions::forward()).unwrap();
        assert!(close(f.at(&[0, 0]), cv(16.0, 0.0), 1e-12));
        let others: f64 = f
            .data()
            .iter()
            .skip(1)
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(others <= 1e-12);
    }

    #[test]
    fn nd_transform_is_separable() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let u: Vec<ComplexValue> = (0..8).map(|_| cv(rng.gen(), rng.gen())).collect();
        let v: Vec<ComplexValue> = (0..16).map(|_| cv(rng.gen(), rng.gen())).collect();
        let outer: Vec<ComplexValue> = u
            .iter()
            .flat_map(|&a| v.iter().map(move |&b| a * b))
            .collect();
        let t = Tensor::new(vec![8, 16], outer).unwrap();
        let f2 = fft_nd(&t, &FftOptions::forward()).unwrap();
        let mut fu = u.clone();
        let mut fv = v.clone();
        fft_1d(&mut fu, &FftOptions::forward()).unwrap();
        fft_1d(&mut fv, &FftOptions::forward()).unwrap();
        for i in 0..8 {
            for j in 0..16 {
                assert!(close(f2.at(&[i, j]), fu[i] * fv[j], 1e-10));
            }
        }
    }

    #[test]
    fn nd_round_trip_with_undo() {
        let x = rand_signal(4 * 8 * 2, 23);
        let t = Tensor::new(vec![4, 8, 2], x).unwrap();
        let f = fft_nd(&t, &FftOptions::forward()).unwrap();
        assert_eq!(f.shape(), &[4, 8, 2]);
        let b = fft_nd(&f, &FftOptions::inverse()).unwrap();
        for (a, c) in t.data().iter().zip(b.data()) {
            assert!(close(*a, *c, 1e-10));
        }
    }

    #[test]
    fn nd_elided_transposes_reverse_axes_and_invert_cleanly() {
        let x = rand_signal(4 * 8 * 2, 29);
        let t = Tensor::new(vec![4, 8, 2], x).unwrap();
        let opts = FftOptions::forward()
            .variant(FftVariant::DecimationInFrequency)
            .shuffle(false)
            .transposes(false);
        let f = fft_nd(&t, &opts).unwrap();
        assert_eq!(f.shape(), &[2, 8, 4]);
        let iopts = FftOptions::inverse()
            .variant(FftVariant::DecimationInTime)
            .shuffle(false)
            .transposes(false);
        let b = fft_nd(&f, &iopts).unwrap();
        assert_eq!(b.shape(), &[4, 8, 2]);
        for (a, c) in t.data().iter().zip(b.data()) {
            assert!(close(*a, *c, 1e-10));
        }
    }

    #[test]
    fn shuffle_elision_matches_shuffled_convolution_path() {
        // DIF forward without shuffle, pointwise multiply, DIT inverse
        // without shuffle: same result as the fully shuffled pipeline.
        let x = rand_signal(256, 41);
        let y = rand_signal(256, 42);

        let run = |shuffled: bool| -> Vec<ComplexValue> {
            let fwd = if shuffled {
                FftOptions::forward()
            } else {
                FftOptions::forward()
                    .variant(FftVariant::DecimationInFrequency)
                    .shuffle(false)
            };
            let inv = if shuffled {
                FftOptions::inverse()
            } else {
                FftOptions::inverse()
                    .variant(FftVariant::DecimationInTime)
                    .shuffle(false)
            };
            let mut fx = x.clone();
            let mut fy = y.clone();
            fft_1d(&mut fx, &fwd).unwrap();
            fft_1d(&mut fy, &fwd).unwrap();
            let mut prod: Vec<ComplexValue> =
                fx.iter().zip(&fy).map(|(&a, &b)| a * b).collect();
            fft_1d(&mut prod, &inv).unwrap();
            prod
        };

        let plain = run(true);
        let elided = run(false);
        for (a, b) in plain.iter().zip(&elided) {
            assert!(close(*a, *b, 1e-9));
        }
    }
}
