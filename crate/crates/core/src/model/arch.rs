//! Layer plans derived from an [`ArchSpec`]. A plan is a pure function of
//! the spec: it fixes every parameter name, shape, and the layer sequence.

use super::{ArchSpec, Family, ParamKind};
use crate::error::{Error, Result};

/// Static description of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub fan_in: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Layer {
    Linear {
        weight: usize,
        bias: Option<usize>,
    },
    Conv {
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        stats: usize,
    },
    Relu,
    MaxPool,
    GlobalAvgPool,
    Flatten,
    /// `relu(body(x) + shortcut(x))`; an empty shortcut is the identity.
    Residual {
        body: Vec<Layer>,
        shortcut: Vec<Layer>,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct Plan {
    pub layers: Vec<Layer>,
    pub params: Vec<ParamSpec>,
    /// Names of batchnorm running-statistic slots with their channel counts.
    pub stats: Vec<(String, usize)>,
}

const VGG_POOL: usize = 0;

fn vgg_ratios(depth: usize) -> Option<&'static [usize]> {
    const M: usize = VGG_POOL;
    Some(match depth {
        11 => &[1, M, 2, M, 4, 4, M, 8, 8, M, 8, 8, M],
        13 => &[1, 1, M, 2, 2, M, 4, 4, M, 8, 8, M, 8, 8, M],
        16 => &[1, 1, M, 2, 2, M, 4, 4, 4, M, 8, 8, 8, M, 8, 8, 8, M],
        19 => &[
            1, 1, M, 2, 2, M, 4, 4, 4, 4, M, 8, 8, 8, 8, M, 8, 8, 8, 8, M,
        ],
        _ => return None,
    })
}

/// Blocks per stage and whether blocks are bottlenecks.
fn resnet_layout(depth: usize) -> Option<([usize; 4], bool)> {
    match depth {
        18 => Some(([2, 2, 2, 2], false)),
        34 => Some(([3, 4, 6, 3], false)),
        50 => Some(([3, 4, 6, 3], true)),
        _ => None,
    }
}

struct Builder {
    params: Vec<ParamSpec>,
    stats: Vec<(String, usize)>,
    use_bias: bool,
}

impl Builder {
    fn param(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, fan_in: usize) -> usize {
        self.params.push(ParamSpec {
            name,
            shape,
            kind,
            fan_in,
        });
        self.params.len() - 1
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize, bias: bool) -> Layer {
        let weight = self.param(
            format!("{prefix}.weight"),
            vec![d_in, d_out],
            ParamKind::Weight,
            d_in,
        );
        let bias = bias.then(|| self.param(format!("{prefix}.bias"), vec![d_out], ParamKind::Bias, d_in));
        Layer::Linear { weight, bias }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Layer {
        let fan_in = c_in * k * k;
        let weight = self.param(
            format!("{prefix}.weight"),
            vec![c_out, c_in, k, k],
            ParamKind::Weight,
            fan_in,
        );
        let bias = bias.then(|| self.param(format!("{prefix}.bias"), vec![c_out], ParamKind::Bias, fan_in));
        Layer::Conv {
            weight,
            bias,
            stride,
            pad,
        }
    }

    fn bn(&mut self, prefix: &str, c: usize) -> Layer {
        let gamma = self.param(format!("{prefix}.gamma"), vec![c], ParamKind::BnGamma, c);
        let beta = self.param(format!("{prefix}.beta"), vec![c], ParamKind::BnBeta, c);
        self.stats.push((prefix.to_string(), c));
        Layer::BatchNorm {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

pub(crate) fn plan(spec: &ArchSpec) -> Result<Plan> {
    spec.validate()?;
    let mut b = Builder {
        params: Vec::new(),
        stats: Vec::new(),
        use_bias: spec.use_bias,
    };
    let layers = match spec.family {
        Family::Mlp => mlp(spec, &mut b),
        Family::VggLike => vgg(spec, &mut b)?,
        Family::ResnetLike => resnet(spec, &mut b)?,
    };
    Ok(Plan {
        layers,
        params: b.params,
        stats: b.stats,
    })
}

fn mlp(spec: &ArchSpec, b: &mut Builder) -> Vec<Layer> {
    let mut layers = vec![Layer::Flatten];
    let mut d = spec.input_dim();
    let bias = b.use_bias;
    for i in 0..spec.depth {
        layers.push(b.linear(&format!("fc{}", i + 1), d, spec.width, bias));
        layers.push(Layer::Relu);
        d = spec.width;
    }
    layers.push(b.linear("out", d, spec.num_classes, bias));
    layers
}

fn vgg(spec: &ArchSpec, b: &mut Builder) -> Result<Vec<Layer>> {
    let ratios = vgg_ratios(spec.depth)
        .ok_or_else(|| Error::Config(format!("vgg-like depth {} (use 11, 13, 16 or 19)", spec.depth)))?;
    let (mut c, mut h, mut w) = spec.chw()?;
    let bias = b.use_bias;
    let mut layers = Vec::new();
    let mut idx = 0;
    for &r in ratios {
        if r == VGG_POOL {
            // Pools that would shrink a side below one pixel are skipped.
            if h >= 2 && w >= 2 {
                layers.push(Layer::MaxPool);
                h /= 2;
                w /= 2;
            }
            continue;
        }
        idx += 1;
        let out = spec.width * r;
        layers.push(b.conv(&format!("conv{idx}"), c, out, 3, 1, 1, bias));
        layers.push(Layer::Relu);
        c = out;
    }
    layers.push(Layer::Flatten);
    layers.push(b.linear("classifier", c * h * w, spec.num_classes, bias));
    Ok(layers)
}

fn resnet(spec: &ArchSpec, b: &mut Builder) -> Result<Vec<Layer>> {
    let (blocks, bottleneck) = resnet_layout(spec.depth)
        .ok_or_else(|| Error::Config(format!("resnet-like depth {} (use 18, 34 or 50)", spec.depth)))?;
    let (c_in, mut h, mut w) = spec.chw()?;
    let expansion = if bottleneck { 4 } else { 1 };
    let mut layers = vec![
        b.conv("stem.conv", c_in, spec.width, 3, 1, 1, false),
        b.bn("stem.bn", spec.width),
        Layer::Relu,
    ];
    let mut c = spec.width;
    for (stage, (&n_blocks, ratio)) in blocks.iter().zip([1, 2, 4, 8]).enumerate() {
        let planes = spec.width * ratio;
        for blk in 0..n_blocks {
            let stride = if stage > 0 && blk == 0 && h >= 2 && w >= 2 { 2 } else { 1 };
            let p = format!("layer{}.{}", stage + 1, blk);
            let out = planes * expansion;
            let body = if bottleneck {
                vec![
                    b.conv(&format!("{p}.conv1"), c, planes, 1, 1, 0, false),
                    b.bn(&format!("{p}.bn1"), planes),
                    Layer::Relu,
                    b.conv(&format!("{p}.conv2"), planes, planes, 3, stride, 1, false),
                    b.bn(&format!("{p}.bn2"), planes),
                    Layer::Relu,
                    b.conv(&format!("{p}.conv3"), planes, out, 1, 1, 0, false),
                    b.bn(&format!("{p}.bn3"), out),
                ]
            } else {
                vec![
                    b.conv(&format!("{p}.conv1"), c, planes, 3, stride, 1, false),
                    b.bn(&format!("{p}.bn1"), planes),
                    Layer::Relu,
                    b.conv(&format!("{p}.conv2"), planes, out, 3, 1, 1, false),
                    b.bn(&format!("{p}.bn2"), out),
                ]
            };
            let shortcut = if stride != 1 || c != out {
                vec![
                    b.conv(&format!("{p}.shortcut.conv"), c, out, 1, stride, 0, false),
                    b.bn(&format!("{p}.shortcut.bn"), out),
                ]
            } else {
                Vec::new()
            };
            layers.push(Layer::Residual { body, shortcut });
            h = conv_out(h, 3, stride, 1);
            w = conv_out(w, 3, stride, 1);
            c = out;
        }
    }
    layers.push(Layer::GlobalAvgPool);
    let bias = b.use_bias;
    layers.push(b.linear("fc", c, spec.num_classes, bias));
    Ok(layers)
}
