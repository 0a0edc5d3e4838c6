//! Backbone, pyramid, cross-frame attention stacks and decoders.

use crate::autograd::Var;
use crate::error::Result;

use super::attention::{cross_frame_block, from_tokens, to_tokens, BlockSpec};
use super::config::{BackboneKind, ModelConfig, PositionalEncoding};
use super::params::{Binder, Init};

pub(crate) fn conv<'t>(b: &Binder<'t, '_>, name: &str, x: Var<'t>, cout: usize, k: usize) -> Var<'t> {
    let fan_in = x.shape()[0] * k * k;
    conv_init(b, name, x, cout, k, Init::He { fan_in })
}

fn conv_init<'t>(b: &Binder<'t, '_>, name: &str, x: Var<'t>, cout: usize, k: usize, init: Init) -> Var<'t> {
    let cin = x.shape()[0];
    let w = b.param(&format!("{name}.weight"), &[cout, cin, k, k], init);
    let bias = b.param(&format!("{name}.bias"), &[cout], Init::Zeros);
    x.conv2d(w, Some(bias), 1, k / 2, 1)
}

const VGG16: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];

/// Backbone features after each of the `n_levels + 1` pooling stages.
fn backbone<'t>(cfg: &ModelConfig, b: &Binder<'t, '_>, image: Var<'t>) -> Vec<Var<'t>> {
    let mut x = image;
    let mut outs = Vec::with_capacity(cfg.n_levels + 1);
    for s in 0..=cfg.n_levels {
        match cfg.backbone {
            BackboneKind::Small => {
                let width = cfg.backbone_width << s;
                for j in 0..2 {
                    x = conv(b, &format!("backbone.stage{s}.conv{j}"), x, width, 3).relu();
                }
            }
            BackboneKind::Vgg16 => {
                let (w, n) = VGG16[s];
                let width = (w * cfg.backbone_width / 64).max(1);
                for j in 0..n {
                    x = conv(b, &format!("backbone.conv{}_{}", s + 1, j + 1), x, width, 3).relu();
                }
            }
        }
        x = x.max_pool2();
        outs.push(x);
    }
    outs
}

/// `n_levels` maps of `C` channels; level `i` (0-based) has stride `2^(i+2)`.
pub(crate) fn pyramid<'t>(cfg: &ModelConfig, b: &Binder<'t, '_>, image: Var<'t>) -> Vec<Var<'t>> {
    let feats = backbone(cfg, b, image);
    let n = cfg.n_levels;
    let c = cfg.channels;
    let laterals: Vec<Var<'t>> = (0..n)
        .map(|i| conv(b, &format!("fpn.lateral{i}"), feats[i + 1], c, 1))
        .collect();
    let mut merged = vec![laterals[n - 1]; n];
    for i in (0..n - 1).rev() {
        merged[i] = laterals[i].add(merged[i + 1].upsample2());
    }
    merged
        .into_iter()
        .enumerate()
        .map(|(i, m)| conv(b, &format!("fpn.smooth{i}"), m, c, 3))
        .collect()
}

fn spatial(x: Var<'_>) -> (usize, usize) {
    let s = x.shape();
    (s[1], s[2])
}

/// All levels resized to the smallest scale and merged by a 1x1 convolution.
pub(crate) fn global_feature<'t>(cfg: &ModelConfig, b: &Binder<'t, '_>, levels: &[Var<'t>]) -> Var<'t> {
    let (h, w) = spatial(*levels.last().expect("at least one level"));
    let resized: Vec<Var<'t>> = levels.iter().map(|l| l.resize_bilinear(h, w)).collect();
    conv(b, "global.fuse", Var::concat0(&resized), cfg.channels, 1)
}

fn positional<'t>(cfg: &ModelConfig, b: &Binder<'t, '_>, name: &str, x: Var<'t>) -> Var<'t> {
    match cfg.dcfa.positional_encoding {
        PositionalEncoding::None => x,
        PositionalEncoding::Conditional => {
            let c = cfg.channels;
            let w = b.param(&format!("{name}.weight"), &[c, 1, 3, 3], Init::He { fan_in: 9 });
            let bias = b.param(&format!("{name}.bias"), &[c], Init::Zeros);
            x.add(x.conv2d(w, Some(bias), 1, 1, c))
        }
    }
}

fn block_spec(cfg: &ModelConfig, mlp_hidden: usize) -> BlockSpec {
    BlockSpec {
        width: cfg.channels,
        heads: cfg.dcfa.n_heads,
        mlp_hidden,
        mca_residual: cfg.dcfa.mca_residual,
    }
}

/// Fuses the previous unit's output into level `i`: bilinear resize,
/// channel concatenation, 1x1 projection back to `C` channels.
pub(crate) fn fusion<'t>(
    cfg: &ModelConfig,
    b: &Binder<'t, '_>,
    name: &str,
    prev: Var<'t>,
    level: Var<'t>,
) -> Var<'t> {
    let (h, w) = spatial(level);
    let cat = Var::concat0(&[prev.resize_bilinear(h, w), level]);
    conv(b, name, cat, cfg.channels, 1)
}

/// Shared feature of the `query` frame: unit `i` attends from the query
/// frame (fused with the previous unit) to the raw level-`i` features of
/// the other frame.
pub(crate) fn dcfa<'t>(
    cfg: &ModelConfig,
    b: &Binder<'t, '_>,
    query: &[Var<'t>],
    other: &[Var<'t>],
) -> Result<Var<'t>> {
    let spec = block_spec(cfg, cfg.channels * cfg.dcfa.mlp_ratio);
    let mut prev: Option<Var<'t>> = None;
    for u in 0..cfg.dcfa.n_units {
        let x = match prev {
            None => query[u],
            Some(p) => fusion(cfg, b, &format!("dcfa.unit{u}.fusion"), p, query[u]),
        };
        let pe = format!("dcfa.unit{u}.pe");
        let x = positional(cfg, b, &pe, x);
        let kv = to_tokens(positional(cfg, b, &pe, other[u]));
        let (h, w) = spatial(x);
        let mut t = to_tokens(x);
        for k in 0..cfg.dcfa.n_blocks_per_unit {
            t = cross_frame_block(b, &format!("dcfa.unit{u}.block{k}"), t, kv, spec)?;
        }
        prev = Some(from_tokens(t, h, w));
    }
    Ok(prev.expect("n_units >= 1"))
}

/// Single stack of `n_units * n_blocks_per_unit` blocks on global features.
pub(crate) fn scfa<'t>(
    cfg: &ModelConfig,
    b: &Binder<'t, '_>,
    query: Var<'t>,
    other: Var<'t>,
    mlp_hidden: usize,
) -> Result<Var<'t>> {
    let spec = block_spec(cfg, mlp_hidden);
    let (h, w) = spatial(query);
    let kv = to_tokens(positional(cfg, b, "scfa.pe", other));
    let mut t = to_tokens(positional(cfg, b, "scfa.pe", query));
    for k in 0..cfg.dcfa.n_units * cfg.dcfa.n_blocks_per_unit {
        t = cross_frame_block(b, &format!("scfa.block{k}"), t, kv, spec)?;
    }
    Ok(from_tokens(t, h, w))
}

/// Output rectifier of a density head. While training, negative inputs keep
/// a small slope so a head pushed below zero can still recover.
fn rectify<'t>(cfg: &ModelConfig, b: &Binder<'t, '_>, x: Var<'t>) -> Var<'t> {
    if b.is_trainable() && cfg.train_leak > 0.0 {
        x.leaky_relu(cfg.train_leak)
    } else {
        x.relu()
    }
}

/// `n_levels + 1` stages of {3x3 conv, ReLU, 2x nearest upsample} from the
/// smallest pyramid scale to input resolution, then a 3x3 head and ReLU.
pub(crate) fn decoder<'t>(cfg: &ModelConfig, b: &Binder<'t, '_>, name: &str, feat: Var<'t>) -> Var<'t> {
    let mut x = feat;
    for s in 0..=cfg.n_levels {
        let width = (cfg.channels >> (s + 1)).max(cfg.decoder_min_channels);
        x = conv(b, &format!("{name}.stage{s}"), x, width, 3).relu().upsample2();
    }
    rectify(cfg, b, conv(b, &format!("{name}.head"), x, 1, 3)).scale(cfg.density_unit)
}

/// Inflow-outflow decoder on a global-minus-shared difference map:
/// `relu(d + f(d))` with `f` three 3x3 convolutions, the last one
/// zero-initialized so the decoder starts as `relu(d)`.
pub(crate) fn dio<'t>(cfg: &ModelConfig, b: &Binder<'t, '_>, diff: Var<'t>) -> Var<'t> {
    let c = cfg.dio_channels;
    let d = diff.scale(1.0 / cfg.density_unit);
    let x = conv(b, "dio.conv0", d, c, 3).relu();
    let x = conv(b, "dio.conv1", x, c, 3).relu();
    let r = conv_init(b, "dio.conv2", x, 1, 3, Init::Zeros);
    rectify(cfg, b, d.add(r)).scale(cfg.density_unit)
}
