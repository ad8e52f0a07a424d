//! Toy two-stream forward model: a factorized (2+1)D visual stream over
//! 4-channel clips, a 2D residual stream over 1-channel sub-spectrograms,
//! and a single fused affine head.

use super::conv::{
    conv2plus1d, conv2plus1d_params, conv3d_direct, conv3d_params, midplanes, spatial_spec,
    temporal_spec, Activation, Conv3dSpec,
};
use super::tensor::Tensor;
use super::weights::WeightStore;
use crate::audiodsp::SubSpectrogram;
use crate::clipper::Clip;
use crate::error::{Error, Result};

/// Architecture hyperparameters. The default is the desk-scale setup: one
/// residual block per stream on top of the stem, 16 base channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TwoStreamConfig {
    /// Clip channels (3 face + 1 mask).
    pub visual_in_channels: usize,
    /// Spectrogram channels.
    pub aural_in_channels: usize,
    pub base_channels: usize,
    pub ex_classes: usize,
    pub au_count: usize,
}

impl Default for TwoStreamConfig {
    fn default() -> TwoStreamConfig {
        TwoStreamConfig {
            visual_in_channels: 4,
            aural_in_channels: 1,
            base_channels: 16,
            ex_classes: 7,
            au_count: 8,
        }
    }
}

impl TwoStreamConfig {
    /// Prediction layout: [valence, arousal, ex logits, au logits].
    pub fn head_width(&self) -> usize {
        2 + self.ex_classes + self.au_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.visual_in_channels == 0
            || self.aural_in_channels == 0
            || self.base_channels == 0
            || self.ex_classes == 0
            || self.au_count == 0
        {
            return Err(Error::Config("all channel/class counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// A (2+1)D convolution layer with its derived intermediate channel count.
#[derive(Debug, Clone, Copy)]
struct Factorized {
    spec: Conv3dSpec,
    mid: usize,
}

impl Factorized {
    fn new(spec: Conv3dSpec) -> Factorized {
        let d = spec.kernel.1.max(spec.kernel.2);
        let mid = midplanes(spec.kernel.0, d, spec.in_channels, spec.out_channels).max(1);
        Factorized { spec, mid }
    }

    fn layout(&self, name: &str, out: &mut Vec<(String, Vec<usize>)>) {
        let s = spatial_spec(&self.spec, self.mid);
        let t = temporal_spec(&self.spec, self.mid);
        out.push((
            format!("{name}.spatial.weight"),
            vec![s.out_channels, s.in_channels, 1, s.kernel.1, s.kernel.2],
        ));
        out.push((format!("{name}.spatial.bias"), vec![s.out_channels]));
        out.push((
            format!("{name}.temporal.weight"),
            vec![t.out_channels, t.in_channels, t.kernel.0, 1, 1],
        ));
        out.push((format!("{name}.temporal.bias"), vec![t.out_channels]));
    }

    fn forward(&self, x: &Tensor, name: &str, w: &WeightStore) -> Result<Tensor> {
        conv2plus1d(
            x,
            &self.spec,
            self.mid,
            w.get(&format!("{name}.spatial.weight"))?,
            Some(w.get(&format!("{name}.spatial.bias"))?),
            w.get(&format!("{name}.temporal.weight"))?,
            Some(w.get(&format!("{name}.temporal.bias"))?),
            Activation::Relu,
        )
    }

    fn params(&self) -> usize {
        conv2plus1d_params(&self.spec, self.mid)
    }
}

/// A plain 3D convolution layer (used with unit time extent as 2D).
#[derive(Debug, Clone, Copy)]
struct Direct {
    spec: Conv3dSpec,
}

impl Direct {
    fn layout(&self, name: &str, out: &mut Vec<(String, Vec<usize>)>) {
        let s = &self.spec;
        out.push((
            format!("{name}.weight"),
            vec![s.out_channels, s.in_channels, s.kernel.0, s.kernel.1, s.kernel.2],
        ));
        out.push((format!("{name}.bias"), vec![s.out_channels]));
    }

    fn forward(&self, x: &Tensor, name: &str, w: &WeightStore) -> Result<Tensor> {
        conv3d_direct(
            x,
            &self.spec,
            w.get(&format!("{name}.weight"))?,
            Some(w.get(&format!("{name}.bias"))?),
        )
    }

    fn params(&self) -> usize {
        conv3d_params(&self.spec)
    }
}

/// The full forward architecture derived from a [`TwoStreamConfig`].
pub struct TwoStreamModel {
    cfg: TwoStreamConfig,
    visual_stem: Factorized,
    visual_conv1: Factorized,
    visual_conv2: Factorized,
    visual_shortcut: Direct,
    aural_stem: Direct,
    aural_conv1: Direct,
    aural_conv2: Direct,
    aural_shortcut: Direct,
}

impl TwoStreamModel {
    pub fn new(cfg: TwoStreamConfig) -> Result<TwoStreamModel> {
        cfg.validate()?;
        let b = cfg.base_channels;
        Ok(TwoStreamModel {
            cfg,
            visual_stem: Factorized::new(Conv3dSpec::new(
                cfg.visual_in_channels,
                b,
                (3, 3, 3),
                (1, 2, 2),
                (1, 1, 1),
            )),
            visual_conv1: Factorized::new(Conv3dSpec::new(b, 2 * b, (3, 3, 3), (2, 2, 2), (1, 1, 1))),
            visual_conv2: Factorized::new(Conv3dSpec::new(
                2 * b,
                2 * b,
                (3, 3, 3),
                (1, 1, 1),
                (1, 1, 1),
            )),
            visual_shortcut: Direct {
                spec: Conv3dSpec::new(b, 2 * b, (1, 1, 1), (2, 2, 2), (0, 0, 0)),
            },
            aural_stem: Direct {
                spec: Conv3dSpec::new(cfg.aural_in_channels, b, (1, 7, 7), (1, 2, 2), (0, 3, 3)),
            },
            aural_conv1: Direct {
                spec: Conv3dSpec::new(b, 2 * b, (1, 3, 3), (1, 2, 2), (0, 1, 1)),
            },
            aural_conv2: Direct {
                spec: Conv3dSpec::new(2 * b, 2 * b, (1, 3, 3), (1, 1, 1), (0, 1, 1)),
            },
            aural_shortcut: Direct {
                spec: Conv3dSpec::new(b, 2 * b, (1, 1, 1), (1, 2, 2), (0, 0, 0)),
            },
        })
    }

    pub fn config(&self) -> &TwoStreamConfig {
        &self.cfg
    }

    /// Feature width after fusing both pooled streams.
    pub fn feature_dim(&self) -> usize {
        4 * self.cfg.base_channels
    }

    /// Every weight blob the model needs, in a stable order.
    pub fn weight_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visual_stem.layout("visual.stem", &mut out);
        self.visual_conv1.layout("visual.block.conv1", &mut out);
        self.visual_conv2.layout("visual.block.conv2", &mut out);
        self.visual_shortcut.layout("visual.block.shortcut", &mut out);
        self.aural_stem.layout("aural.stem", &mut out);
        self.aural_conv1.layout("aural.block.conv1", &mut out);
        self.aural_conv2.layout("aural.block.conv2", &mut out);
        self.aural_shortcut.layout("aural.block.shortcut", &mut out);
        out.push((
            "head.weight".to_string(),
            vec![self.cfg.head_width(), self.feature_dim()],
        ));
        out.push(("head.bias".to_string(), vec![self.cfg.head_width()]));
        out
    }

    /// Exact parameter count, biases included.
    pub fn param_count(&self) -> usize {
        self.visual_stem.params()
            + self.visual_conv1.params()
            + self.visual_conv2.params()
            + self.visual_shortcut.params()
            + self.aural_stem.params()
            + self.aural_conv1.params()
            + self.aural_conv2.params()
            + self.aural_shortcut.params()
            + head_params(self.feature_dim(), self.cfg.head_width())
    }

    /// Run the forward pass on prepared tensors.
    ///
    /// `clip` is (1, visual_in_channels, l, H, W); `sub` is
    /// (1, aural_in_channels, 1, rows, n_mels). Returns the prediction
    /// vector [v, a, ex logits, au logits] with v, a squashed by tanh.
    pub fn forward(&self, clip: &Tensor, sub: &Tensor, w: &WeightStore) -> Result<Vec<f64>> {
        let visual = {
            let stem = relu(self.visual_stem.forward(clip, "visual.stem", w)?);
            let main = self.visual_conv2.forward(
                &relu(self.visual_conv1.forward(&stem, "visual.block.conv1", w)?),
                "visual.block.conv2",
                w,
            )?;
            let shortcut = self.visual_shortcut.forward(&stem, "visual.block.shortcut", w)?;
            global_average_pool(&relu(add(main, &shortcut)?))
        };

        let aural = {
            let stem = relu(self.aural_stem.forward(sub, "aural.stem", w)?);
            let main = self.aural_conv2.forward(
                &relu(self.aural_conv1.forward(&stem, "aural.block.conv1", w)?),
                "aural.block.conv2",
                w,
            )?;
            let shortcut = self.aural_shortcut.forward(&stem, "aural.block.shortcut", w)?;
            global_average_pool(&relu(add(main, &shortcut)?))
        };

        let mut features = visual;
        features.extend(aural);
        if features.len() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "fused features have {} entries, expected {}",
                features.len(),
                self.feature_dim()
            )));
        }

        let head_w = w.get("head.weight")?;
        let head_b = w.get("head.bias")?;
        let width = self.cfg.head_width();
        let mut out = Vec::with_capacity(width);
        for k in 0..width {
            let row = &head_w[k * features.len()..(k + 1) * features.len()];
            let z: f64 = head_b[k]
                + row
                    .iter()
                    .zip(&features)
                    .map(|(wi, fi)| wi * fi)
                    .sum::<f64>();
            out.push(z);
        }
        out[0] = out[0].tanh();
        out[1] = out[1].tanh();
        Ok(out)
    }
}

fn relu(t: Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

fn add(mut a: Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "residual shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    Ok(a)
}

/// Mean over (T, H, W) per channel of a (1, C, T, H, W) tensor.
fn global_average_pool(t: &Tensor) -> Vec<f64> {
    let c = t.shape()[1];
    let per_channel = t.shape()[2] * t.shape()[3] * t.shape()[4];
    (0..c)
        .map(|ch| {
            t.data()[ch * per_channel..(ch + 1) * per_channel]
                .iter()
                .sum::<f64>()
                / per_channel as f64
        })
        .collect()
}

/// Parameters of the fused affine head: (F + 1) outputs per row.
pub fn head_params(feature_dim: usize, head_width: usize) -> usize {
    (feature_dim + 1) * head_width
}

/// Exact parameter count of the model built from `cfg`.
pub fn count_params(cfg: &TwoStreamConfig) -> Result<usize> {
    Ok(TwoStreamModel::new(*cfg)?.param_count())
}

/// Convert an l x H x W x 4 clip into the (1, 4, l, H, W) input tensor.
pub fn clip_to_tensor(clip: &Clip) -> Tensor {
    let (l, h, w) = (clip.frames, clip.height as usize, clip.width as usize);
    let mut t = Tensor::zeros(&[1, 4, l, h, w]);
    let data = t.data_mut();
    let plane = l * h * w;
    for f in 0..l {
        for y in 0..h {
            for x in 0..w {
                let src = ((f * h + y) * w + x) * 4;
                let dst = (f * h + y) * w + x;
                for c in 0..4 {
                    data[c * plane + dst] = clip.data[src + c] as f64;
                }
            }
        }
    }
    t
}

/// Convert a sub-spectrogram into the (1, 1, 1, rows, n_mels) input tensor.
pub fn subspectrogram_to_tensor(sub: &SubSpectrogram) -> Tensor {
    Tensor::from_data(&[1, 1, 1, sub.rows(), sub.n_mels()], sub.data().to_vec())
        .expect("sub-spectrogram data is dense")
}

/// Forward pass from raw preprocessing outputs.
pub fn two_stream_forward(
    clip: &Clip,
    sub: &SubSpectrogram,
    cfg: &TwoStreamConfig,
    weights: &WeightStore,
) -> Result<Vec<f64>> {
    let model = TwoStreamModel::new(*cfg)?;
    model.forward(&clip_to_tensor(clip), &subspectrogram_to_tensor(sub), weights)
}
