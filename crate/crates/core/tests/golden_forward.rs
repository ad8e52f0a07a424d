//! Golden-vector regression test for the two-stream forward pass.
//!
//! The expected output was produced once by `reference_forward` below — a
//! scalar reimplementation of the network (its own convolution loops, pooling
//! and head) that shares nothing with the library's kernel code — and frozen
//! into `tests/fixtures/golden_forward.json`. The live test checks the
//! library against both the frozen file and the reference path.

use auravis_core::audiodsp::{extract_subspectrogram, mel_spectrogram, MelConfig, Waveform};
use auravis_core::clipper::Clip;
use auravis_core::netkernels::{
    generate_fixture_weights, two_stream_forward, TwoStreamConfig, WeightStore,
};

const WEIGHT_SEED: u64 = 42;

fn golden_config() -> TwoStreamConfig {
    TwoStreamConfig {
        base_channels: 4,
        ..TwoStreamConfig::default()
    }
}

/// Deterministic clip: a smooth function of (frame, y, x, channel).
fn golden_clip() -> Clip {
    let (frames, size) = (4usize, 32u32);
    let mut data = Vec::with_capacity(frames * (size * size) as usize * 4);
    for f in 0..frames {
        for y in 0..size {
            for x in 0..size {
                for c in 0..4 {
                    let v = 0.5
                        + 0.35 * ((x as f64 * 0.31) + (f as f64 + 1.0) * 0.7).sin()
                        + 0.15 * ((y as f64 * 0.17) - c as f64 * 0.9).cos();
                    data.push((v * 0.5).clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Clip {
        frames,
        height: size,
        width: size,
        anchor: 3,
        data,
    }
}

fn golden_sub() -> auravis_core::audiodsp::SubSpectrogram {
    let cfg = MelConfig {
        sample_rate: 8_000,
        n_mels: 32,
        window_secs: 0.02,
        stride_secs: 0.01,
        n_fft: 256,
    };
    let samples: Vec<f64> = (0..16_000)
        .map(|i| {
            let t = i as f64 / 8_000.0;
            0.5 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 1230.0 * t).sin()
        })
        .collect();
    let spec = mel_spectrogram(&Waveform::new(samples, 8_000), &cfg).unwrap();
    extract_subspectrogram(&spec, 30, 30.0, 1.0).unwrap()
}

// ---- independent scalar reference ---------------------------------------

struct RefTensor {
    c: usize,
    t: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl RefTensor {
    fn get(&self, c: usize, t: i64, y: i64, x: i64) -> f64 {
        if t < 0 || y < 0 || x < 0 || t >= self.t as i64 || y >= self.h as i64 || x >= self.w as i64
        {
            return 0.0;
        }
        self.data[((c * self.t + t as usize) * self.h + y as usize) * self.w + x as usize]
    }
}

#[allow(clippy::too_many_arguments)]
fn ref_conv(
    input: &RefTensor,
    out_c: usize,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
) -> RefTensor {
    let (kt, kh, kw) = kernel;
    let ot = (input.t + 2 * pad.0 - kt) / stride.0 + 1;
    let oh = (input.h + 2 * pad.1 - kh) / stride.1 + 1;
    let ow = (input.w + 2 * pad.2 - kw) / stride.2 + 1;
    let mut out = RefTensor {
        c: out_c,
        t: ot,
        h: oh,
        w: ow,
        data: vec![0.0; out_c * ot * oh * ow],
    };
    for oc in 0..out_c {
        for t in 0..ot {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..input.c {
                        for a in 0..kt {
                            for b in 0..kh {
                                for c in 0..kw {
                                    let w = weights[(((oc * input.c + ic) * kt + a) * kh + b) * kw
                                        + c];
                                    acc += w
                                        * input.get(
                                            ic,
                                            (t * stride.0 + a) as i64 - pad.0 as i64,
                                            (y * stride.1 + b) as i64 - pad.1 as i64,
                                            (x * stride.2 + c) as i64 - pad.2 as i64,
                                        );
                                }
                            }
                        }
                    }
                    out.data[((oc * ot + t) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    out
}

fn ref_relu(mut t: RefTensor) -> RefTensor {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
    t
}

fn ref_add(mut a: RefTensor, b: &RefTensor) -> RefTensor {
    a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
    a
}

fn ref_gap(t: &RefTensor) -> Vec<f64> {
    let per = t.t * t.h * t.w;
    (0..t.c)
        .map(|c| t.data[c * per..(c + 1) * per].iter().sum::<f64>() / per as f64)
        .collect()
}

/// midplanes as an independent expression of the same formula.
fn ref_mid(t: usize, d: usize, n_in: usize, n_out: usize) -> usize {
    (t * d * d * n_in * n_out) / (d * d * n_in + t * n_out)
}

fn ref_factorized(
    input: &RefTensor,
    out_c: usize,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
    w: &WeightStore,
    name: &str,
) -> RefTensor {
    let mid = ref_mid(kernel.0, kernel.1.max(kernel.2), input.c, out_c).max(1);
    let hidden = ref_conv(
        input,
        mid,
        (1, kernel.1, kernel.2),
        (1, stride.1, stride.2),
        (0, pad.1, pad.2),
        w.get(&format!("{name}.spatial.weight")).unwrap(),
        w.get(&format!("{name}.spatial.bias")).unwrap(),
    );
    let hidden = ref_relu(hidden);
    ref_conv(
        &hidden,
        out_c,
        (kernel.0, 1, 1),
        (stride.0, 1, 1),
        (pad.0, 0, 0),
        w.get(&format!("{name}.temporal.weight")).unwrap(),
        w.get(&format!("{name}.temporal.bias")).unwrap(),
    )
}

fn ref_direct(
    input: &RefTensor,
    out_c: usize,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
    w: &WeightStore,
    name: &str,
) -> RefTensor {
    ref_conv(
        input,
        out_c,
        kernel,
        stride,
        pad,
        w.get(&format!("{name}.weight")).unwrap(),
        w.get(&format!("{name}.bias")).unwrap(),
    )
}

fn reference_forward(
    clip: &Clip,
    sub: &auravis_core::audiodsp::SubSpectrogram,
    cfg: &TwoStreamConfig,
    w: &WeightStore,
) -> Vec<f64> {
    let b = cfg.base_channels;

    // clip (l, H, W, 4) channel-last -> (4, l, H, W)
    let (l, h, wd) = (clip.frames, clip.height as usize, clip.width as usize);
    let mut visual_in = RefTensor {
        c: 4,
        t: l,
        h,
        w: wd,
        data: vec![0.0; 4 * l * h * wd],
    };
    for f in 0..l {
        for y in 0..h {
            for x in 0..wd {
                for c in 0..4 {
                    visual_in.data[((c * l + f) * h + y) * wd + x] =
                        clip.data[((f * h + y) * wd + x) * 4 + c] as f64;
                }
            }
        }
    }

    let stem = ref_relu(ref_factorized(
        &visual_in,
        b,
        (3, 3, 3),
        (1, 2, 2),
        (1, 1, 1),
        w,
        "visual.stem",
    ));
    let main = ref_factorized(
        &ref_relu(ref_factorized(
            &stem,
            2 * b,
            (3, 3, 3),
            (2, 2, 2),
            (1, 1, 1),
            w,
            "visual.block.conv1",
        )),
        2 * b,
        (3, 3, 3),
        (1, 1, 1),
        (1, 1, 1),
        w,
        "visual.block.conv2",
    );
    let shortcut = ref_direct(
        &stem,
        2 * b,
        (1, 1, 1),
        (2, 2, 2),
        (0, 0, 0),
        w,
        "visual.block.shortcut",
    );
    let visual_feat = ref_gap(&ref_relu(ref_add(main, &shortcut)));

    let aural_in = RefTensor {
        c: 1,
        t: 1,
        h: sub.rows(),
        w: sub.n_mels(),
        data: sub.data().to_vec(),
    };
    let stem = ref_relu(ref_direct(
        &aural_in,
        b,
        (1, 7, 7),
        (1, 2, 2),
        (0, 3, 3),
        w,
        "aural.stem",
    ));
    let main = ref_direct(
        &ref_relu(ref_direct(
            &stem,
            2 * b,
            (1, 3, 3),
            (1, 2, 2),
            (0, 1, 1),
            w,
            "aural.block.conv1",
        )),
        2 * b,
        (1, 3, 3),
        (1, 1, 1),
        (0, 1, 1),
        w,
        "aural.block.conv2",
    );
    let shortcut = ref_direct(
        &stem,
        2 * b,
        (1, 1, 1),
        (1, 2, 2),
        (0, 0, 0),
        w,
        "aural.block.shortcut",
    );
    let aural_feat = ref_gap(&ref_relu(ref_add(main, &shortcut)));

    let mut features = visual_feat;
    features.extend(aural_feat);
    let head_w = w.get("head.weight").unwrap();
    let head_b = w.get("head.bias").unwrap();
    let width = cfg.head_width();
    let mut out: Vec<f64> = (0..width)
        .map(|k| {
            head_b[k]
                + head_w[k * features.len()..(k + 1) * features.len()]
                    .iter()
                    .zip(&features)
                    .map(|(wi, fi)| wi * fi)
                    .sum::<f64>()
        })
        .collect();
    out[0] = out[0].tanh();
    out[1] = out[1].tanh();
    out
}

// ---- tests ---------------------------------------------------------------

const GOLDEN_PATH: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/golden_forward.json"
);

/// One-time generator for the frozen fixture (reference path only):
/// `cargo test -p auravis-core --test golden_forward -- --ignored regenerate`
#[test]
#[ignore]
fn regenerate_golden_file() {
    let cfg = golden_config();
    let weights = generate_fixture_weights(&cfg, WEIGHT_SEED).unwrap();
    let out = reference_forward(&golden_clip(), &golden_sub(), &cfg, &weights);
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "weight_seed": WEIGHT_SEED,
        "output": out,
    }))
    .unwrap();
    std::fs::write(GOLDEN_PATH, json).unwrap();
}

#[test]
fn forward_matches_frozen_golden_vector() {
    let cfg = golden_config();
    let weights = generate_fixture_weights(&cfg, WEIGHT_SEED).unwrap();
    let got = two_stream_forward(&golden_clip(), &golden_sub(), &cfg, &weights).unwrap();

    let text = std::fs::read_to_string(GOLDEN_PATH).expect("fixture is committed");
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let expected: Vec<f64> = json["output"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();

    assert_eq!(got.len(), expected.len());
    for (i, (g, e)) in got.iter().zip(&expected).enumerate() {
        assert!((g - e).abs() <= 1e-5, "entry {i}: {g} vs {e}");
    }
}

#[test]
fn forward_matches_reference_reimplementation() {
    let cfg = golden_config();
    let weights = generate_fixture_weights(&cfg, WEIGHT_SEED).unwrap();
    let clip = golden_clip();
    let sub = golden_sub();
    let lib = two_stream_forward(&clip, &sub, &cfg, &weights).unwrap();
    let reference = reference_forward(&clip, &sub, &cfg, &weights);
    assert_eq!(lib.len(), reference.len());
    for (i, (a, b)) in lib.iter().zip(&reference).enumerate() {
        assert!((a - b).abs() <= 1e-9, "entry {i}: {a} vs {b}");
    }
}
