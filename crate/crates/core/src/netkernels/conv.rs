//! Direct 3D convolution and its factorized (2+1)D counterpart.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// 3D cross-correlation parameters over (time, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (t, kh, kw)
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
}

impl Conv3dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
    ) -> Conv3dSpec {
        Conv3dSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Shape("channel counts must be positive".into()));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.kernel.2 == 0 {
            return Err(Error::Shape("kernel dimensions must be positive".into()));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 || self.stride.2 == 0 {
            return Err(Error::Shape("strides must be positive".into()));
        }
        Ok(())
    }

    /// Number of weights (excluding bias).
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1 * self.kernel.2
    }

    /// Output shape for an (N, C, T, H, W) input.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 5]> {
        self.validate()?;
        if input.len() != 5 {
            return Err(Error::Shape(format!(
                "expected a 5D (N,C,T,H,W) input, got {input:?}"
            )));
        }
        if input[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, spec expects {} (dimension 1)",
                input[1], self.in_channels
            )));
        }
        let out_dim = |size: usize, k: usize, s: usize, p: usize, name: &str| -> Result<usize> {
            let padded = size + 2 * p;
            if padded < k {
                return Err(Error::Shape(format!(
                    "kernel {k} does not fit input extent {size} with padding {p} (dimension {name})"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok([
            input[0],
            self.out_channels,
            out_dim(input[2], self.kernel.0, self.stride.0, self.padding.0, "2/time")?,
            out_dim(input[3], self.kernel.1, self.stride.1, self.padding.1, "3/height")?,
            out_dim(input[4], self.kernel.2, self.stride.2, self.padding.2, "4/width")?,
        ])
    }
}

/// Nonlinearity between the factorized convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Identity; exists so factorized kernels can be compared against the
    /// full 3D oracle, where the composition must stay linear.
    Linear,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Direct (naive) 3D cross-correlation; the ground-truth oracle.
///
/// `weights` is (out, in, t, kh, kw) row-major; `bias` has one entry per
/// output channel when present.
pub fn conv3d_direct(
    x: &Tensor,
    spec: &Conv3dSpec,
    weights: &[f64],
    bias: Option<&[f64]>,
) -> Result<Tensor> {
    let out_shape = spec.output_shape(x.shape())?;
    if weights.len() != spec.weight_len() {
        return Err(Error::Shape(format!(
            "weights have {} entries, spec needs {}",
            weights.len(),
            spec.weight_len()
        )));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::Shape(format!(
                "bias has {} entries, spec has {} output channels",
                b.len(),
                spec.out_channels
            )));
        }
    }

    let [n_batch, out_c, out_t, out_h, out_w] = out_shape;
    let (in_c, in_t, in_h, in_w) = (x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]);
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let (pt, ph, pw) = spec.padding;

    let xd = x.data();
    let mut out = Tensor::zeros(&out_shape);
    let od = out.data_mut();

    let in_plane = in_h * in_w;
    let in_chan = in_t * in_plane;
    let w_per_out = in_c * kt * kh * kw;

    // Padding is handled by clamping loop ranges, keeping the per-pixel
    // accumulation loop branch free. For a fixed kernel tap the valid
    // output columns ox satisfy 0 <= ox*sw + x0 + dx < in_w.
    let ox_range = |offset: isize| -> (usize, usize) {
        // smallest ox with ox*sw >= -offset; one past largest with
        // ox*sw <= in_w - 1 - offset
        let lo = if offset >= 0 {
            0
        } else {
            ((-offset) as usize).div_ceil(sw)
        };
        let max = in_w as isize - 1 - offset;
        if max < 0 {
            return (0, 0);
        }
        let hi = (max as usize / sw + 1).min(out_w);
        (lo.min(hi), hi)
    };

    for n in 0..n_batch {
        let x_batch = n * in_c * in_chan;
        for oc in 0..out_c {
            let w_base = oc * w_per_out;
            let b = bias.map_or(0.0, |b| b[oc]);
            for ot in 0..out_t {
                let t0 = (ot * st) as isize - pt as isize;
                let dt_lo = (-t0).max(0) as usize;
                let dt_hi = ((in_t as isize - t0).max(0) as usize).min(kt);
                for oy in 0..out_h {
                    let y0 = (oy * sh) as isize - ph as isize;
                    let dy_lo = (-y0).max(0) as usize;
                    let dy_hi = ((in_h as isize - y0).max(0) as usize).min(kh);

                    let o_row = (((n * out_c + oc) * out_t + ot) * out_h + oy) * out_w;
                    let out_row = &mut od[o_row..o_row + out_w];
                    out_row.iter_mut().for_each(|v| *v = b);

                    for ic in 0..in_c {
                        let x_chan = x_batch + ic * in_chan;
                        let w_chan = w_base + ic * kt * kh * kw;
                        for dt in dt_lo..dt_hi {
                            let x_time = x_chan + (t0 + dt as isize) as usize * in_plane;
                            let w_time = w_chan + dt * kh * kw;
                            for dy in dy_lo..dy_hi {
                                let x_row_base = x_time + (y0 + dy as isize) as usize * in_w;
                                let x_row = &xd[x_row_base..x_row_base + in_w];
                                let w_row = &weights[w_time + dy * kw..w_time + dy * kw + kw];
                                for (dx, &w) in w_row.iter().enumerate() {
                                    let offset = dx as isize - pw as isize;
                                    let (lo, hi) = ox_range(offset);
                                    if lo >= hi {
                                        continue;
                                    }
                                    let src0 = (lo * sw) as isize + offset;
                                    debug_assert!(src0 >= 0);
                                    let mut src = src0 as usize;
                                    if sw == 1 {
                                        let src_slice = &x_row[src..src + (hi - lo)];
                                        for (o, &v) in out_row[lo..hi].iter_mut().zip(src_slice) {
                                            *o += w * v;
                                        }
                                    } else {
                                        for o in out_row[lo..hi].iter_mut() {
                                            *o += w * x_row[src];
                                            src += sw;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Intermediate channel count of the factorized pair; chosen so the
/// factorization never uses more parameters than the full 3D kernel:
/// M = floor(t d² n_in n_out / (d² n_in + t n_out)).
pub fn midplanes(t: usize, d: usize, n_in: usize, n_out: usize) -> usize {
    t * d * d * n_in * n_out / (d * d * n_in + t * n_out)
}

/// Factorized (2+1)D convolution: a spatial (1, kh, kw) convolution into
/// `mid` channels, the activation, then a temporal (t, 1, 1) convolution.
/// Produces exactly the output shape of [`conv3d_direct`] with `spec`.
pub fn conv2plus1d(
    x: &Tensor,
    spec: &Conv3dSpec,
    mid: usize,
    w_spatial: &[f64],
    b_spatial: Option<&[f64]>,
    w_temporal: &[f64],
    b_temporal: Option<&[f64]>,
    activation: Activation,
) -> Result<Tensor> {
    if mid == 0 {
        return Err(Error::Shape("midplanes must be >= 1".into()));
    }
    let spatial = spatial_spec(spec, mid);
    let temporal = temporal_spec(spec, mid);
    let hidden = conv3d_direct(x, &spatial, w_spatial, b_spatial)?;
    let hidden = hidden.map(|v| activation.apply(v));
    conv3d_direct(&hidden, &temporal, w_temporal, b_temporal)
}

/// Spatial half of the factorization: (1, kh, kw), spatial stride/padding.
pub fn spatial_spec(spec: &Conv3dSpec, mid: usize) -> Conv3dSpec {
    Conv3dSpec::new(
        spec.in_channels,
        mid,
        (1, spec.kernel.1, spec.kernel.2),
        (1, spec.stride.1, spec.stride.2),
        (0, spec.padding.1, spec.padding.2),
    )
}

/// Temporal half of the factorization: (t, 1, 1), temporal stride/padding.
pub fn temporal_spec(spec: &Conv3dSpec, mid: usize) -> Conv3dSpec {
    Conv3dSpec::new(
        mid,
        spec.out_channels,
        (spec.kernel.0, 1, 1),
        (spec.stride.0, 1, 1),
        (spec.padding.0, 0, 0),
    )
}

/// Parameter count of a full 3D convolution, bias included.
pub fn conv3d_params(spec: &Conv3dSpec) -> usize {
    spec.weight_len() + spec.out_channels
}

/// Parameter count of the factorized pair, biases included.
pub fn conv2plus1d_params(spec: &Conv3dSpec, mid: usize) -> usize {
    let spatial = spatial_spec(spec, mid);
    let temporal = temporal_spec(spec, mid);
    spatial.weight_len() + mid + temporal.weight_len() + spec.out_channels
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.fill_random(&mut ChaCha8Rng::seed_from_u64(seed));
        t
    }

    /// Independent scalar reference: plain index arithmetic, no shared code
    /// with the implementation's offset bookkeeping.
    fn reference_conv3d(x: &Tensor, spec: &Conv3dSpec, w: &[f64], bias: Option<&[f64]>) -> Tensor {
        let out_shape = spec.output_shape(x.shape()).unwrap();
        let mut out = Tensor::zeros(&out_shape);
        let [nb, oc, ot, oh, ow] = out_shape;
        let (kt, kh, kw) = spec.kernel;
        let get_w = |o: usize, i: usize, a: usize, b: usize, c: usize| {
            w[(((o * spec.in_channels + i) * kt + a) * kh + b) * kw + c]
        };
        for n in 0..nb {
            for o in 0..oc {
                for t in 0..ot {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = bias.map_or(0.0, |b| b[o]);
                            for i in 0..spec.in_channels {
                                for a in 0..kt {
                                    for b in 0..kh {
                                        for c in 0..kw {
                                            let ti = (t * spec.stride.0 + a) as isize
                                                - spec.padding.0 as isize;
                                            let yi = (y * spec.stride.1 + b) as isize
                                                - spec.padding.1 as isize;
                                            let xi = (xx * spec.stride.2 + c) as isize
                                                - spec.padding.2 as isize;
                                            if ti < 0
                                                || yi < 0
                                                || xi < 0
                                                || ti >= x.shape()[2] as isize
                                                || yi >= x.shape()[3] as isize
                                                || xi >= x.shape()[4] as isize
                                            {
                                                continue;
                                            }
                                            acc += x.at5(n, i, ti as usize, yi as usize, xi as usize)
                                                * get_w(o, i, a, b, c);
                                        }
                                    }
                                }
                            }
                            let idx = (((n * oc + o) * ot + t) * oh + y) * ow + xx;
                            out.data_mut()[idx] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = random_tensor(&[1, 1, 3, 4, 4], 1);
        let spec = Conv3dSpec::new(1, 1, (1, 1, 1), (1, 1, 1), (0, 0, 0));
        let y = conv3d_direct(&x, &spec, &[1.0], None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_sums_channels() {
        let x = random_tensor(&[1, 4, 2, 3, 3], 2);
        let spec = Conv3dSpec::new(4, 1, (1, 1, 1), (1, 1, 1), (0, 0, 0));
        let y = conv3d_direct(&x, &spec, &[1.0; 4], None).unwrap();
        for t in 0..2 {
            for yy in 0..3 {
                for xx in 0..3 {
                    let sum: f64 = (0..4).map(|c| x.at5(0, c, t, yy, xx)).sum();
                    assert!((y.at5(0, 0, t, yy, xx) - sum).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_reference_loops() {
        let x = random_tensor(&[1, 2, 4, 5, 5], 3);
        let spec = Conv3dSpec::new(2, 3, (2, 3, 3), (1, 1, 1), (0, 1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let bias: Vec<f64> = vec![0.1, -0.2, 0.3];

        let fast = conv3d_direct(&x, &spec, &w, Some(&bias)).unwrap();
        let slow = reference_conv3d(&x, &spec, &w, Some(&bias));
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_names_the_dimension() {
        let x = random_tensor(&[1, 3, 2, 4, 4], 5);
        let spec = Conv3dSpec::new(4, 1, (1, 1, 1), (1, 1, 1), (0, 0, 0));
        let err = conv3d_direct(&x, &spec, &[1.0; 4], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dimension 1"), "got: {msg}");
    }

    #[test]
    fn midplanes_formula_value() {
        assert_eq!(midplanes(3, 3, 4, 8), 14); // floor(864 / 60)
    }

    #[test]
    fn midplanes_parameter_inequality_exhaustive() {
        for t in 1..=4 {
            for d in 1..=7 {
                for n_in in 1..=32 {
                    for n_out in 1..=32 {
                        let m = midplanes(t, d, n_in, n_out);
                        let factorized = d * d * n_in * m + t * m * n_out;
                        let full = t * d * d * n_in * n_out;
                        assert!(
                            factorized <= full,
                            "t={t} d={d} in={n_in} out={n_out}: {factorized} > {full}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn temporal_identity_reduces_to_2d_convolution() {
        // temporal kernel (1,1,1) of value 1 per channel: the factorized pair
        // equals the per-frame 2D convolution
        let x = random_tensor(&[1, 2, 3, 6, 6], 6);
        let spec = Conv3dSpec::new(2, 2, (1, 3, 3), (1, 1, 1), (0, 1, 1));
        let mid = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ws: Vec<f64> = (0..spatial_spec(&spec, mid).weight_len())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        // temporal = identity map from mid channel m to out channel m
        let mut wt = vec![0.0; temporal_spec(&spec, mid).weight_len()];
        for m in 0..mid {
            wt[m * mid + m] = 1.0;
        }

        let fact = conv2plus1d(&x, &spec, mid, &ws, None, &wt, None, Activation::Linear).unwrap();
        let spatial_only = conv3d_direct(&x, &spatial_spec(&spec, mid), &ws, None).unwrap();
        assert_eq!(fact.shape(), spatial_only.shape());
        for (a, b) in fact.data().iter().zip(spatial_only.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn separable_weights_match_full_3d() {
        let x = random_tensor(&[1, 2, 4, 6, 6], 8);
        let spec = Conv3dSpec::new(2, 3, (3, 3, 3), (1, 1, 1), (1, 1, 1));
        let mid = 2;
        let spatial = spatial_spec(&spec, mid);
        let temporal = temporal_spec(&spec, mid);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ws: Vec<f64> = (0..spatial.weight_len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let wt: Vec<f64> = (0..temporal.weight_len()).map(|_| rng.random::<f64>() - 0.5).collect();

        // w3d[o][i][a][b][c] = Σ_m wt[o][m][a] * ws[m][i][b][c]
        let (kt, kh, kw) = spec.kernel;
        let mut w3d = vec![0.0; spec.weight_len()];
        for o in 0..spec.out_channels {
            for i in 0..spec.in_channels {
                for a in 0..kt {
                    for b in 0..kh {
                        for c in 0..kw {
                            let mut acc = 0.0;
                            for m in 0..mid {
                                let wt_idx = (o * mid + m) * kt + a;
                                let ws_idx = ((m * spec.in_channels + i) * kh + b) * kw + c;
                                acc += wt[wt_idx] * ws[ws_idx];
                            }
                            w3d[(((o * spec.in_channels + i) * kt + a) * kh + b) * kw + c] = acc;
                        }
                    }
                }
            }
        }

        let fact =
            conv2plus1d(&x, &spec, mid, &ws, None, &wt, None, Activation::Linear).unwrap();
        let full = conv3d_direct(&x, &spec, &w3d, None).unwrap();
        assert_eq!(fact.shape(), full.shape());
        for (a, b) in fact.data().iter().zip(full.data()) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn stem_output_shape() {
        let x = Tensor::zeros(&[1, 4, 8, 112, 112]);
        let spec = Conv3dSpec::new(4, 16, (3, 7, 7), (1, 2, 2), (1, 3, 3));
        let mid = midplanes(3, 7, 4, 16);
        let ws = vec![0.0; spatial_spec(&spec, mid).weight_len()];
        let wt = vec![0.0; temporal_spec(&spec, mid).weight_len()];
        let y = conv2plus1d(&x, &spec, mid, &ws, None, &wt, None, Activation::Relu).unwrap();
        assert_eq!(y.shape(), &[1, 16, 8, 56, 56]);
        assert_eq!(y.shape(), spec.output_shape(x.shape()).unwrap());
    }

    #[test]
    fn factorized_shape_equals_direct_shape_on_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let spec = Conv3dSpec::new(
                rng.random_range(1..4),
                rng.random_range(1..5),
                (
                    rng.random_range(1..4),
                    rng.random_range(1..4),
                    rng.random_range(1..4),
                ),
                (
                    rng.random_range(1..3),
                    rng.random_range(1..3),
                    rng.random_range(1..3),
                ),
                (
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                ),
            );
            let in_shape = [
                1,
                spec.in_channels,
                rng.random_range(spec.kernel.0.max(2)..8),
                rng.random_range(spec.kernel.1.max(2)..10),
                rng.random_range(spec.kernel.2.max(2)..10),
            ];
            let x = random_tensor(&in_shape, 11);
            let mid = midplanes(spec.kernel.0, spec.kernel.1.max(spec.kernel.2), spec.in_channels, spec.out_channels).max(1);
            let ws = vec![0.01; spatial_spec(&spec, mid).weight_len()];
            let wt = vec![0.01; temporal_spec(&spec, mid).weight_len()];

            let direct_shape = spec.output_shape(&in_shape).unwrap();
            let fact =
                conv2plus1d(&x, &spec, mid, &ws, None, &wt, None, Activation::Relu).unwrap();
            assert_eq!(fact.shape(), direct_shape, "spec {spec:?}");
        }
    }

    #[test]
    fn linearity_of_both_paths() {
        let spec = Conv3dSpec::new(2, 2, (2, 3, 3), (1, 1, 1), (1, 1, 1));
        let mid = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w3: Vec<f64> = (0..spec.weight_len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let ws: Vec<f64> = (0..spatial_spec(&spec, mid).weight_len())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let wt: Vec<f64> = (0..temporal_spec(&spec, mid).weight_len())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();

        let shape = [1, 2, 3, 5, 5];
        let x = random_tensor(&shape, 13);
        let y = random_tensor(&shape, 14);
        let (alpha, beta) = (0.7, -1.3);
        let combo = Tensor::from_data(
            &shape,
            x.data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        )
        .unwrap();

        for f in [
            |input: &Tensor, w3: &[f64], _ws: &[f64], _wt: &[f64], spec: &Conv3dSpec, _m: usize| {
                conv3d_direct(input, spec, w3, None).unwrap()
            },
            |input: &Tensor, _w3: &[f64], ws: &[f64], wt: &[f64], spec: &Conv3dSpec, m: usize| {
                conv2plus1d(input, spec, m, ws, None, wt, None, Activation::Linear).unwrap()
            },
        ] {
            let fx = f(&x, &w3, &ws, &wt, &spec, mid);
            let fy = f(&y, &w3, &ws, &wt, &spec, mid);
            let fcombo = f(&combo, &w3, &ws, &wt, &spec, mid);
            for ((a, b), c) in fx.data().iter().zip(fy.data()).zip(fcombo.data()) {
                let expected = alpha * a + beta * b;
                assert!((c - expected).abs() < 1e-6, "{c} vs {expected}");
            }
        }
    }

    #[test]
    fn forward_is_bit_stable() {
        let x = random_tensor(&[1, 2, 3, 6, 6], 20);
        let spec = Conv3dSpec::new(2, 4, (3, 3, 3), (1, 2, 2), (1, 1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let a = conv3d_direct(&x, &spec, &w, None).unwrap();
        let b = conv3d_direct(&x, &spec, &w, None).unwrap();
        assert_eq!(a.data(), b.data()); // bitwise
    }

    #[test]
    fn param_count_of_factorized_layer() {
        // t=3, d=3, 4 -> 8 with M=14: 9*4*14 + 3*14*8 weights plus biases
        let spec = Conv3dSpec::new(4, 8, (3, 3, 3), (1, 1, 1), (1, 1, 1));
        let m = midplanes(3, 3, 4, 8);
        assert_eq!(m, 14);
        assert_eq!(conv2plus1d_params(&spec, m), 9 * 4 * 14 + 3 * 14 * 8 + 14 + 8);
        // weight-only comparison: 840 factorized vs 864 full
        assert!(spatial_spec(&spec, m).weight_len() + temporal_spec(&spec, m).weight_len()
            <= spec.weight_len());
    }
}
