use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbc_core::{Grid, ScalarField};
use serde::{Deserialize, Serialize};

use crate::layers::{accumulate_bias_grad, add_bias, gelu, gelu_grad, ConvGeom, KERNEL};
use crate::LranError;

/// Parameter tensors in checkpoint order.
pub const PARAM_NAMES: [&str; 21] = [
    "encoder.conv1.weight",
    "encoder.conv1.bias",
    "encoder.conv2.weight",
    "encoder.conv2.bias",
    "encoder.conv3.weight",
    "encoder.conv3.bias",
    "encoder.conv4.weight",
    "encoder.conv4.bias",
    "encoder.dense.weight",
    "encoder.dense.bias",
    "decoder.dense.weight",
    "decoder.dense.bias",
    "decoder.deconv1.weight",
    "decoder.deconv1.bias",
    "decoder.deconv2.weight",
    "decoder.deconv2.bias",
    "decoder.deconv3.weight",
    "decoder.deconv3.bias",
    "decoder.deconv4.weight",
    "decoder.deconv4.bias",
    "koopman",
];

const ENC_CONV: usize = 0;
const ENC_DENSE: usize = 8;
const DEC_DENSE: usize = 10;
const DEC_CONV: usize = 12;
pub(crate) const KOOPMAN: usize = 20;

/// Layer widths and grid of the convolutional autoencoder.
///
/// The encoder runs four 5×5 convolutions with strides 2, 1, 2, 1 and
/// channel counts `channels[0..4]`, then a dense map to the latent space.
/// The decoder mirrors it with transposed convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub ny: usize,
    pub nx: usize,
    pub channels: [usize; 4],
    pub latent_dim: usize,
}

impl Architecture {
    pub fn new(ny: usize, nx: usize, channels: [usize; 4], latent_dim: usize) -> Result<Self, LranError> {
        if ny < 4 || nx < 4 || ny % 4 != 0 || nx % 4 != 0 {
            return Err(LranError::InvalidArchitecture(format!(
                "grid {ny}x{nx} must have both sides divisible by 4"
            )));
        }
        if channels.contains(&0) || latent_dim == 0 {
            return Err(LranError::InvalidArchitecture(
                "channel counts and latent_dim must be positive".into(),
            ));
        }
        Ok(Self {
            ny,
            nx,
            channels,
            latent_dim,
        })
    }

    /// The reference network on the 64 × 96 grid, widths 32, 64, 32, 32.
    pub fn reference(latent_dim: usize) -> Self {
        Self::new(64, 96, [32, 64, 32, 32], latent_dim).expect("valid reference shape")
    }

    pub fn for_grid(grid: &Grid, channels: [usize; 4], latent_dim: usize) -> Result<Self, LranError> {
        Self::new(grid.ny, grid.nx, channels, latent_dim)
    }

    /// Length of the flattened last convolution output.
    pub fn flat_dim(&self) -> usize {
        self.channels[3] * (self.ny / 4) * (self.nx / 4)
    }

    pub fn field_len(&self) -> usize {
        self.ny * self.nx
    }

    pub(crate) fn encoder_geoms(&self) -> [ConvGeom; 4] {
        let [c0, c1, c2, c3] = self.channels;
        let (h, w) = (self.ny, self.nx);
        [
            ConvGeom::new(1, c0, h, w, 2),
            ConvGeom::new(c0, c1, h / 2, w / 2, 1),
            ConvGeom::new(c1, c2, h / 2, w / 2, 2),
            ConvGeom::new(c2, c3, h / 4, w / 4, 1),
        ]
    }

    /// Geometries of the convolutions adjoint to each decoder layer: layer
    /// `k` maps `cout` channels on the output grid to `cin` channels on the
    /// input grid.
    pub(crate) fn decoder_geoms(&self) -> [ConvGeom; 4] {
        let [c0, c1, c2, c3] = self.channels;
        let (h, w) = (self.ny, self.nx);
        [
            ConvGeom::new(c2, c3, h / 4, w / 4, 1),
            ConvGeom::new(c1, c2, h / 2, w / 2, 2),
            ConvGeom::new(c0, c1, h / 2, w / 2, 1),
            ConvGeom::new(1, c0, h, w, 2),
        ]
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (n, f) = (self.latent_dim, self.flat_dim());
        let mut shapes = Vec::with_capacity(PARAM_NAMES.len());
        for g in self.encoder_geoms() {
            shapes.push(vec![g.cout, g.cin, KERNEL, KERNEL]);
            shapes.push(vec![g.cout]);
        }
        shapes.push(vec![n, f]);
        shapes.push(vec![n]);
        shapes.push(vec![f, n]);
        shapes.push(vec![f]);
        for g in self.decoder_geoms() {
            shapes.push(vec![g.cout, g.cin, KERNEL, KERNEL]);
            shapes.push(vec![g.cin]);
        }
        shapes.push(vec![n, n]);
        shapes
    }

    fn fan_in(&self, index: usize) -> usize {
        let shapes = self.param_shapes();
        let w = &shapes[index & !1];
        match index {
            i if i < ENC_DENSE => w[1] * KERNEL * KERNEL,
            i if i < DEC_CONV => w[1],
            _ => w[0] * KERNEL * KERNEL,
        }
    }
}

pub(crate) fn mat(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    let rows = a.shape()[0];
    let cols = a.len() / rows.max(1);
    a.view().into_shape_with_order((rows, cols)).expect("contiguous parameter")
}

pub(crate) fn mat_mut(a: &mut ArrayD<f64>) -> ArrayViewMut2<'_, f64> {
    let rows = a.shape()[0];
    let cols = a.len() / rows.max(1);
    a.view_mut().into_shape_with_order((rows, cols)).expect("contiguous parameter")
}

pub(crate) fn vec1(a: &ArrayD<f64>) -> ArrayView1<'_, f64> {
    a.view().into_shape_with_order(a.len()).expect("contiguous parameter")
}

pub(crate) fn vec1_mut(a: &mut ArrayD<f64>) -> ArrayViewMut1<'_, f64> {
    let n = a.len();
    a.view_mut().into_shape_with_order(n).expect("contiguous parameter")
}

/// Activations kept from an encoder pass for backpropagation.
pub(crate) struct EncoderTrace {
    /// Input of each convolution.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each convolution.
    pre: Vec<Array2<f64>>,
    /// Flattened activation fed to the dense layer.
    flat: Array1<f64>,
}

pub(crate) struct DecoderTrace {
    dense_pre: Array1<f64>,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    latent: Array1<f64>,
}

/// Encoder, decoder and Koopman matrix with the input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct LranModel {
    arch: Architecture,
    params: Vec<ArrayD<f64>>,
    pub input_mean: f64,
    pub input_std: f64,
}

impl LranModel {
    /// Fan-in scaled uniform weights and biases, `K = I`, identity
    /// normalization.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if i == KOOPMAN {
                    let n = shape[0];
                    return Array2::<f64>::eye(n).into_dyn();
                }
                let bound = 1.0 / (arch.fan_in(i) as f64).sqrt();
                ArrayD::from_shape_simple_fn(IxDyn(&shape), || rng.gen_range(-bound..bound))
            })
            .collect();
        Self {
            arch,
            params,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }

    /// Assembles a model from explicit tensors, checking every shape.
    pub fn from_parts(
        arch: Architecture,
        params: Vec<ArrayD<f64>>,
        input_mean: f64,
        input_std: f64,
    ) -> Result<Self, LranError> {
        let shapes = arch.param_shapes();
        if params.len() != shapes.len() {
            return Err(LranError::InvalidArchitecture(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((p, s), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            if p.shape() != s.as_slice() {
                return Err(LranError::InvalidArchitecture(format!(
                    "{name}: expected shape {s:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        if !(input_std.is_finite() && input_std > 0.0 && input_mean.is_finite()) {
            return Err(LranError::ZeroVariance);
        }
        Ok(Self {
            arch,
            params: params.into_iter().map(|p| p.as_standard_layout().into_owned()).collect(),
            input_mean,
            input_std,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn params(&self) -> &[ArrayD<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ArrayD<f64>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn k_matrix(&self) -> ArrayView2<'_, f64> {
        mat(&self.params[KOOPMAN])
    }

    pub fn set_k_matrix(&mut self, k: &Array2<f64>) -> Result<(), LranError> {
        let n = self.latent_dim();
        if k.dim() != (n, n) {
            return Err(LranError::LatentMismatch {
                expected: n,
                got: k.nrows(),
            });
        }
        self.params[KOOPMAN] = k.clone().into_dyn();
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.arch.nx, self.arch.ny).expect("architecture grid is valid")
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.input_mean) / self.input_std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.input_std + self.input_mean
    }

    fn check_field(&self, q: &ScalarField<f64>) -> Result<(), LranError> {
        let got = q.grid().shape();
        let expected = (self.arch.ny, self.arch.nx);
        if got != expected {
            return Err(LranError::ShapeMismatch { expected, got });
        }
        Ok(())
    }

    /// Normalized field as a one-channel activation `[1, ny·nx]`.
    pub(crate) fn normalized_input(&self, q: &ScalarField<f64>) -> Result<Array2<f64>, LranError> {
        self.check_field(q)?;
        let flat: Vec<f64> = q.values().iter().map(|&v| self.normalize(v)).collect();
        Ok(Array2::from_shape_vec((1, flat.len()), flat).expect("row vector"))
    }

    pub fn encode(&self, q: &ScalarField<f64>) -> Result<Array1<f64>, LranError> {
        let x = self.normalized_input(q)?;
        Ok(self.encode_normalized(&x).0)
    }

    /// Decoded field in physical units.
    pub fn decode(&self, g: &[f64]) -> Result<ScalarField<f64>, LranError> {
        if g.len() != self.latent_dim() {
            return Err(LranError::LatentMismatch {
                expected: self.latent_dim(),
                got: g.len(),
            });
        }
        let (out, _) = self.decode_normalized(&ArrayView1::from(g).to_owned());
        let flat: Vec<f64> = out.iter().map(|&v| self.denormalize(v)).collect();
        Ok(ScalarField::from_flat(self.grid(), flat)?)
    }

    /// `decode(Kⁿ encode(entry))` for `n = 1..=horizon`.
    pub fn rollout(&self, entry: &ScalarField<f64>, horizon: usize) -> Result<Vec<ScalarField<f64>>, LranError> {
        let k = self.k_matrix();
        let mut g = self.encode(entry)?;
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            g = k.dot(&g);
            out.push(self.decode(g.as_slice().expect("contiguous"))?);
        }
        Ok(out)
    }

    pub(crate) fn encode_normalized(&self, x: &Array2<f64>) -> (Array1<f64>, EncoderTrace) {
        let mut inputs = Vec::with_capacity(4);
        let mut pre = Vec::with_capacity(4);
        let mut a = x.clone();
        for (l, geom) in self.arch.encoder_geoms().iter().enumerate() {
            let w = mat(&self.params[ENC_CONV + 2 * l]);
            let b = vec1(&self.params[ENC_CONV + 2 * l + 1]);
            let mut y = w.dot(&geom.im2col(a.view()));
            add_bias(&mut y, b.as_slice().expect("contiguous"));
            let next = y.mapv(gelu);
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(y);
        }
        let flat = Array1::from_shape_vec(a.len(), a.into_raw_vec_and_offset().0).expect("flatten");
        let g = mat(&self.params[ENC_DENSE]).dot(&flat) + vec1(&self.params[ENC_DENSE + 1]);
        (g, EncoderTrace { inputs, pre, flat })
    }

    /// Decoder output in normalized units, flattened `[ny·nx]`.
    pub(crate) fn decode_normalized(&self, g: &Array1<f64>) -> (Array1<f64>, DecoderTrace) {
        let dense_pre = mat(&self.params[DEC_DENSE]).dot(g) + vec1(&self.params[DEC_DENSE + 1]);
        let c3 = self.arch.channels[3];
        let hw = dense_pre.len() / c3;
        let mut a = Array2::from_shape_vec((c3, hw), dense_pre.mapv(gelu).to_vec()).expect("reshape");
        let mut inputs = Vec::with_capacity(4);
        let mut pre = Vec::with_capacity(4);
        let geoms = self.arch.decoder_geoms();
        for (l, geom) in geoms.iter().enumerate() {
            let w = mat(&self.params[DEC_CONV + 2 * l]);
            let b = vec1(&self.params[DEC_CONV + 2 * l + 1]);
            let mut y = geom.col2im(w.t().dot(&a).view());
            add_bias(&mut y, b.as_slice().expect("contiguous"));
            let next = if l + 1 < geoms.len() { y.mapv(gelu) } else { y.clone() };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(y);
        }
        let out = Array1::from_shape_vec(a.len(), a.into_raw_vec_and_offset().0).expect("flatten");
        (
            out,
            DecoderTrace {
                dense_pre,
                inputs,
                pre,
                latent: g.clone(),
            },
        )
    }

    /// Accumulates parameter gradients for one encoder pass given `dL/dg`.
    pub(crate) fn encoder_backward(&self, trace: &EncoderTrace, dg: &Array1<f64>, grads: &mut [ArrayD<f64>]) {
        {
            let mut dw = mat_mut(&mut grads[ENC_DENSE]);
            let outer = dg.view().insert_axis(ndarray::Axis(1)).dot(&trace.flat.view().insert_axis(ndarray::Axis(0)));
            dw += &outer;
        }
        vec1_mut(&mut grads[ENC_DENSE + 1]).scaled_add(1.0, dg);
        let dflat = mat(&self.params[ENC_DENSE]).t().dot(dg);
        let geoms = self.arch.encoder_geoms();
        let last = &trace.pre[3];
        let mut da = Array2::from_shape_vec(last.dim(), dflat.to_vec()).expect("reshape");
        for l in (0..4).rev() {
            let geom = &geoms[l];
            let mut dy = da;
            dy.zip_mut_with(&trace.pre[l], |d, &p| *d *= gelu_grad(p));
            let cols = geom.im2col(trace.inputs[l].view());
            {
                let mut dw = mat_mut(&mut grads[ENC_CONV + 2 * l]);
                dw += &dy.dot(&cols.t());
            }
            accumulate_bias_grad(
                vec1_mut(&mut grads[ENC_CONV + 2 * l + 1]).as_slice_mut().expect("contiguous"),
                dy.view(),
            );
            if l == 0 {
                break;
            }
            let w = mat(&self.params[ENC_CONV + 2 * l]);
            da = geom.col2im(w.t().dot(&dy).view());
        }
    }

    /// Accumulates decoder gradients given `dL/d(output)` in normalized
    /// units; returns `dL/dg`.
    pub(crate) fn decoder_backward(
        &self,
        trace: &DecoderTrace,
        dout: &Array1<f64>,
        grads: &mut [ArrayD<f64>],
    ) -> Array1<f64> {
        let geoms = self.arch.decoder_geoms();
        let mut da = Array2::from_shape_vec((1, dout.len()), dout.to_vec()).expect("reshape");
        for l in (0..4).rev() {
            let geom = &geoms[l];
            let mut dy = da;
            if l + 1 < geoms.len() {
                dy.zip_mut_with(&trace.pre[l], |d, &p| *d *= gelu_grad(p));
            }
            accumulate_bias_grad(
                vec1_mut(&mut grads[DEC_CONV + 2 * l + 1]).as_slice_mut().expect("contiguous"),
                dy.view(),
            );
            let dcols = geom.im2col(dy.view());
            {
                let mut dw = mat_mut(&mut grads[DEC_CONV + 2 * l]);
                dw += &trace.inputs[l].dot(&dcols.t());
            }
            let w = mat(&self.params[DEC_CONV + 2 * l]);
            da = w.dot(&dcols);
        }
        let mut d_pre = Array1::from_shape_vec(da.len(), da.into_raw_vec_and_offset().0).expect("flatten");
        d_pre.zip_mut_with(&trace.dense_pre, |d, &p| *d *= gelu_grad(p));
        {
            let mut dw = mat_mut(&mut grads[DEC_DENSE]);
            let outer = d_pre
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&trace.latent.view().insert_axis(ndarray::Axis(0)));
            dw += &outer;
        }
        vec1_mut(&mut grads[DEC_DENSE + 1]).scaled_add(1.0, &d_pre);
        mat(&self.params[DEC_DENSE]).t().dot(&d_pre)
    }

    pub(crate) fn zero_grads(&self) -> Vec<ArrayD<f64>> {
        self.params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shapes() {
        let arch = Architecture::reference(100);
        assert_eq!(arch.flat_dim(), 12288);
        let geoms = arch.encoder_geoms();
        let outs: Vec<_> = geoms.iter().map(|g| (g.cout, g.h_out(), g.w_out())).collect();
        assert_eq!(outs, vec![(32, 32, 48), (64, 32, 48), (32, 16, 24), (32, 16, 24)]);
        let dec: Vec<_> = arch.decoder_geoms().iter().map(|g| (g.cin, g.h_in, g.w_in)).collect();
        assert_eq!(dec, vec![(32, 16, 24), (64, 32, 48), (32, 32, 48), (1, 64, 96)]);
    }

    #[test]
    fn parameter_layout() {
        let arch = Architecture::new(8, 12, [2, 3, 2, 2], 4).unwrap();
        let model = LranModel::new(arch, 1);
        assert_eq!(model.params().len(), PARAM_NAMES.len());
        assert_eq!(model.k_matrix(), Array2::<f64>::eye(4));
        assert_eq!(model.params()[ENC_DENSE].shape(), &[4, 12]);
        assert_eq!(model.params()[DEC_CONV + 6].shape(), &[2, 1, 5, 5]);
    }

    #[test]
    fn rejects_indivisible_grid() {
        assert!(Architecture::new(10, 12, [1, 1, 1, 1], 2).is_err());
    }
}
