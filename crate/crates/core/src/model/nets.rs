use avsep_tensor::{Element, Tensor};

use super::config::{ModelConfig, NormKind};
use super::layers::{Act, Conv, Linear};
use super::params::{Binder, ParamSpec};

const L2_EPS: f64 = 1e-12;

/// 3-D convolution front end, per-frame 2-D encoder, temporal convolutions.
#[derive(Debug, Clone)]
pub(crate) struct LipNet {
    front: Conv,
    frame1: Conv,
    frame2: Conv,
    tcn_in: Conv,
    tcn: Vec<(Conv, Conv)>,
}

impl LipNet {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c = cfg.scaled(64);
        let norm = cfg.norm;
        let v_l = cfg.v_l();
        Self {
            front: Conv::d3("lip.front", 1, c, [5, 7, 7], [1, 2, 2], [2, 3, 3]).with_norm(norm),
            frame1: Conv::d2("lip.frame1", c, 2 * c, [3, 3], [2, 2], [1, 1]).with_norm(norm),
            frame2: Conv::d2("lip.frame2", 2 * c, 4 * c, [3, 3], [2, 2], [1, 1]).with_norm(norm),
            tcn_in: Conv::d1("lip.tcn_in", 4 * c, v_l, 3, 1, 1).with_norm(norm),
            tcn: (0..2)
                .map(|i| {
                    (
                        Conv::d1(format!("lip.tcn{i}.a"), v_l, v_l, 3, 1, 1).with_norm(norm),
                        Conv::d1(format!("lip.tcn{i}.b"), v_l, v_l, 3, 1, 1)
                            .with_norm(norm)
                            .with_gain(residual_gain(norm)),
                    )
                })
                .collect(),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for c in [&self.front, &self.frame1, &self.frame2, &self.tcn_in] {
            c.specs(out);
        }
        for (a, b) in &self.tcn {
            a.specs(out);
            b.specs(out);
        }
    }

    /// `(B, 1, N, H, W)` in `[0, 1]` to `(B, V_l, N)`.
    pub fn forward<T: Element>(&self, b: &Binder<T>, rois: &Tensor<T>) -> Tensor<T> {
        let (batch, n) = (rois.dim(0), rois.dim(2));
        let x = rois.add_scalar(T::from_f64_lossy(-0.5));
        let x = Act::Relu.apply(self.front.forward(b, &x));
        let (c, h, w) = (x.dim(1), x.dim(3), x.dim(4));
        let x = x.permute(&[0, 2, 1, 3, 4]).reshape(&[batch * n, c, h, w]);
        let x = x.max_pool2d([3, 3], [2, 2], [1, 1]);
        let x = Act::Relu.apply(self.frame1.forward(b, &x));
        let x = Act::Relu.apply(self.frame2.forward(b, &x));
        let x = x.mean_spatial();
        let f = x.dim(1);
        let x = x.reshape(&[batch, n, f]).permute(&[0, 2, 1]);
        let mut x = Act::Relu.apply(self.tcn_in.forward(b, &x));
        for (ca, cb) in &self.tcn {
            let y = Act::Relu.apply(ca.forward(b, &x));
            x = x.add(&cb.forward(b, &y)).relu();
        }
        x
    }
}

fn residual_gain(norm: NormKind) -> f64 {
    match norm {
        NormKind::None => 0.2,
        NormKind::Group => 1.0,
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    a: Conv,
    b: Conv,
    down: Option<Conv>,
}

/// ResNet-18 layout ending in a linear projection and L2 normalization.
#[derive(Debug, Clone)]
pub(crate) struct ResNet {
    stem: Conv,
    blocks: Vec<BasicBlock>,
    fc: Linear,
}

impl ResNet {
    pub fn new(prefix: &str, in_channels: usize, out_dim: usize, cfg: &ModelConfig) -> Self {
        let norm = cfg.norm;
        let widths: Vec<usize> = [64, 128, 256, 512].iter().map(|&w| cfg.scaled(w)).collect();
        let stem = Conv::d2(format!("{prefix}.stem"), in_channels, widths[0], [7, 7], [2, 2], [3, 3]).with_norm(norm);
        let mut blocks = Vec::new();
        let mut cin = widths[0];
        for (stage, &w) in widths.iter().enumerate() {
            for j in 0..2 {
                let stride = if stage > 0 && j == 0 { 2 } else { 1 };
                let name = format!("{prefix}.layer{}.{j}", stage + 1);
                let down = (stride != 1 || cin != w).then(|| {
                    Conv::d2(format!("{name}.down"), cin, w, [1, 1], [stride, stride], [0, 0]).with_norm(norm)
                });
                blocks.push(BasicBlock {
                    a: Conv::d2(format!("{name}.a"), cin, w, [3, 3], [stride, stride], [1, 1]).with_norm(norm),
                    b: Conv::d2(format!("{name}.b"), w, w, [3, 3], [1, 1], [1, 1])
                        .with_norm(norm)
                        .with_gain(residual_gain(norm)),
                    down,
                });
                cin = w;
            }
        }
        Self {
            stem,
            blocks,
            fc: Linear::new(format!("{prefix}.fc"), cin, out_dim),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.stem.specs(out);
        for blk in &self.blocks {
            blk.a.specs(out);
            blk.b.specs(out);
            if let Some(d) = &blk.down {
                d.specs(out);
            }
        }
        self.fc.specs(out);
    }

    /// `(B, C, H, W)` to unit rows `(B, out_dim)`.
    pub fn forward<T: Element>(&self, b: &Binder<T>, x: &Tensor<T>) -> Tensor<T> {
        let mut x = Act::Relu.apply(self.stem.forward(b, x)).max_pool2d([3, 3], [2, 2], [1, 1]);
        for blk in &self.blocks {
            let y = Act::Relu.apply(blk.a.forward(b, &x));
            let y = blk.b.forward(b, &y);
            let skip = match &blk.down {
                Some(d) => d.forward(b, &x),
                None => x.clone(),
            };
            x = skip.add(&y).relu();
        }
        self.fc
            .forward(b, &x.mean_spatial())
            .l2_normalize(T::from_f64_lossy(L2_EPS))
    }
}

/// Encoder activations kept for the decoder's skip connections.
pub(crate) struct Encoded<T: Element> {
    /// `(B, D, 1, N)`.
    pub bottleneck: Tensor<T>,
    pub stage1: Tensor<T>,
    pub stage2: Tensor<T>,
    /// Pre-pooling output of each frequency block.
    pub blocks: Vec<Tensor<T>>,
}

/// Spectrogram hourglass: two stride-2 stages, frequency-halving blocks down
/// to a `D x 1 x N` bottleneck, and a mirrored decoder with skips.
#[derive(Debug, Clone)]
pub(crate) struct AudioUnet {
    conv1: Conv,
    conv2: Conv,
    enc: Vec<(Conv, Conv)>,
    dec: Vec<(Conv, Conv)>,
    up2: Conv,
    up1: Conv,
    mask_bound: f64,
}

impl AudioUnet {
    pub fn block_widths(cfg: &ModelConfig) -> Vec<usize> {
        let n = cfg.freq_blocks();
        (0..n)
            .map(|i| {
                let halvings = (n - 1 - i).div_ceil(2);
                cfg.scaled(cfg.audio_channels >> halvings)
            })
            .collect()
    }

    pub fn new(cfg: &ModelConfig, out_channels: usize) -> Self {
        let norm = cfg.norm;
        let c1 = cfg.scaled(cfg.audio_channels / 8);
        let c2 = cfg.scaled(cfg.audio_channels / 4);
        let widths = Self::block_widths(cfg);
        let n = widths.len();
        let mut enc = Vec::new();
        let mut cin = c2;
        for (i, &w) in widths.iter().enumerate() {
            enc.push((
                Conv::d2(format!("audio_enc.block{i}.a"), cin, w, [3, 3], [1, 1], [1, 1]).with_norm(norm),
                Conv::d2(format!("audio_enc.block{i}.b"), w, w, [3, 3], [1, 1], [1, 1]).with_norm(norm),
            ));
            cin = w;
        }
        let mut dec = Vec::new();
        for i in (0..n).rev() {
            let below = if i == n - 1 { cfg.fusion_channels() } else { widths[i] };
            let out = if i > 0 { widths[i - 1] } else { c2 };
            dec.push((
                Conv::d2(format!("audio_dec.block{i}.a"), below + widths[i], out, [3, 3], [1, 1], [1, 1]).with_norm(norm),
                Conv::d2(format!("audio_dec.block{i}.b"), out, out, [3, 3], [1, 1], [1, 1]).with_norm(norm),
            ));
        }
        let f = cfg.freq_bins();
        let (f1, f2) = cfg.stage_freqs();
        let t = cfg.time_frames();
        let t1 = t / 2;
        let t2 = cfg.n_frames;
        Self {
            conv1: Conv::d2("audio_enc.conv1", 2, c1, [4, 4], [2, 2], [1, 1]),
            conv2: Conv::d2("audio_enc.conv2", c1, c2, [4, 4], [2, 2], [1, 1]).with_norm(norm),
            enc,
            dec,
            up2: Conv::t2("audio_dec.up2", 2 * c2, c1, [4, 4], [2, 2], [1, 1], [f1 - 2 * f2, t1 - 2 * t2]).with_norm(norm),
            up1: Conv::t2("audio_dec.up1", 2 * c1, out_channels, [4, 4], [2, 2], [1, 1], [f - 2 * f1, t - 2 * t1])
                .with_gain(0.1),
            mask_bound: cfg.mask_bound,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.conv1.specs(out);
        self.conv2.specs(out);
        for (a, b) in &self.enc {
            a.specs(out);
            b.specs(out);
        }
        for (a, b) in &self.dec {
            a.specs(out);
            b.specs(out);
        }
        self.up2.specs(out);
        self.up1.specs(out);
    }

    /// `(B, 2, F, T)` to encoder activations.
    pub fn encode<T: Element>(&self, b: &Binder<T>, x: &Tensor<T>) -> Encoded<T> {
        let s1 = Act::Leaky.apply(self.conv1.forward(b, x));
        let s2 = Act::Leaky.apply(self.conv2.forward(b, &s1));
        let mut x = s2.clone();
        let mut blocks = Vec::with_capacity(self.enc.len());
        for (ca, cb) in &self.enc {
            let y = Act::Leaky.apply(ca.forward(b, &x));
            let y = Act::Leaky.apply(cb.forward(b, &y));
            x = y.avg_pool2d([2, 1]);
            blocks.push(y);
        }
        Encoded {
            bottleneck: x,
            stage1: s1,
            stage2: s2,
            blocks,
        }
    }

    /// Decodes rows `rows` of `enc` fused with `visual` (`(R, V', 1, N)`),
    /// returning bounded masks `(R, out_channels, F, T)`.
    pub fn decode<T: Element>(
        &self,
        b: &Binder<T>,
        enc: &Encoded<T>,
        rows: &[usize],
        visual: Option<&Tensor<T>>,
    ) -> Tensor<T> {
        let identity = rows.len() == enc.bottleneck.dim(0) && rows.iter().enumerate().all(|(i, &r)| i == r);
        let pick = |t: &Tensor<T>| if identity { t.clone() } else { t.select(rows) };
        let mut x = match visual {
            Some(v) => Tensor::concat(&[v.clone(), pick(&enc.bottleneck)], 1),
            None => pick(&enc.bottleneck),
        };
        let n = self.dec.len();
        for (j, (ca, cb)) in self.dec.iter().enumerate() {
            let i = n - 1 - j;
            let up = x.upsample_nearest2d([2, 1]);
            let y = Tensor::concat(&[up, pick(&enc.blocks[i])], 1);
            let y = Act::Relu.apply(ca.forward(b, &y));
            x = Act::Relu.apply(cb.forward(b, &y));
        }
        let x = Act::Relu.apply(self.up2.forward(b, &Tensor::concat(&[x, pick(&enc.stage2)], 1)));
        let x = self.up1.forward(b, &Tensor::concat(&[x, pick(&enc.stage1)], 1));
        x.tanh().scale(T::from_f64_lossy(self.mask_bound))
    }
}
