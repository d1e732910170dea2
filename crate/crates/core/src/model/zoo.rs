//! Compute graphs for the four registered backbones.
//!
//! Each builder returns a feature extractor in the architectural style of
//! its family — plain convolution stacks, residual blocks, parallel
//! multi-branch modules, fused expand/project blocks — at a compact size
//! suitable for CPU training. Weights always come from a checkpoint in the
//! weight store; the seeded values used at construction here are placeholders
//! that a checkpoint load overwrites.

use super::BackboneName;
use crate::nn::{Conv2d, MaxPool2, MultiBranch, ReLU, Residual, Sequential, SiLU};
use crate::rng::SplitMix64;

/// Build the named backbone graph. Returns the layer stack and the number
/// of feature channels it produces (the input width of the head).
pub fn build_backbone(name: BackboneName, rng: &mut SplitMix64) -> (Sequential, usize) {
    match name {
        BackboneName::Vgg19 => build_plain_stack(rng),
        BackboneName::ResNet50 => build_residual(rng),
        BackboneName::InceptionV3 => build_multibranch(rng),
        BackboneName::EfficientNetV2 => build_fused(rng),
    }
}

/// Uniform 3x3 convolution stack with max pooling between stages.
fn build_plain_stack(rng: &mut SplitMix64) -> (Sequential, usize) {
    let mut net = Sequential::default();
    net.push(Conv2d::new("conv1", 3, 8, 3, 2, 1, rng));
    net.push(ReLU::new());
    net.push(MaxPool2::new());
    net.push(Conv2d::new("conv2", 8, 16, 3, 1, 1, rng));
    net.push(ReLU::new());
    net.push(MaxPool2::new());
    net.push(Conv2d::new("conv3", 16, 32, 3, 1, 1, rng));
    net.push(ReLU::new());
    net.push(MaxPool2::new());
    net.push(Conv2d::new("conv4", 32, 48, 3, 1, 1, rng));
    net.push(ReLU::new());
    net.push(MaxPool2::new());
    (net, 48)
}

fn res_block(
    name: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    rng: &mut SplitMix64,
) -> Residual {
    let mut main = Sequential::default();
    main.push(Conv2d::new(&format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1, rng));
    main.push(ReLU::new());
    main.push(Conv2d::new(&format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, rng));
    let shortcut = if stride != 1 || in_ch != out_ch {
        let mut s = Sequential::default();
        s.push(Conv2d::new(&format!("{name}.proj"), in_ch, out_ch, 1, stride, 0, rng));
        Some(s)
    } else {
        None
    };
    Residual::new(main, shortcut)
}

/// Residual blocks with projection shortcuts on the downsampling stages.
fn build_residual(rng: &mut SplitMix64) -> (Sequential, usize) {
    let mut net = Sequential::default();
    net.push(Conv2d::new("stem", 3, 8, 3, 2, 1, rng));
    net.push(ReLU::new());
    net.push(MaxPool2::new());
    net.push(res_block("block1", 8, 16, 2, rng));
    net.push(ReLU::new());
    net.push(res_block("block2", 16, 32, 2, rng));
    net.push(ReLU::new());
    net.push(res_block("block3", 32, 32, 1, rng));
    net.push(ReLU::new());
    (net, 32)
}

fn branch(layers: Vec<Box<dyn crate::nn::Layer>>) -> Sequential {
    Sequential::new(layers)
}

/// Parallel multi-branch modules with mixed 1x1/3x3 convolutions,
/// concatenated along channels.
fn build_multibranch(rng: &mut SplitMix64) -> (Sequential, usize) {
    let mut net = Sequential::default();
    net.push(Conv2d::new("stem", 3, 8, 3, 2, 1, rng));
    net.push(ReLU::new());
    net.push(MaxPool2::new());
    // mixed module: 8 -> 8 + 10 + 6 = 24 channels
    net.push(MultiBranch::new(vec![
        branch(vec![
            Box::new(Conv2d::new("mix1.b1.conv1", 8, 8, 1, 1, 0, rng)),
            Box::new(ReLU::new()),
        ]),
        branch(vec![
            Box::new(Conv2d::new("mix1.b2.conv1", 8, 6, 1, 1, 0, rng)),
            Box::new(ReLU::new()),
            Box::new(Conv2d::new("mix1.b2.conv2", 6, 10, 3, 1, 1, rng)),
            Box::new(ReLU::new()),
        ]),
        branch(vec![
            Box::new(Conv2d::new("mix1.b3.conv1", 8, 4, 1, 1, 0, rng)),
            Box::new(ReLU::new()),
            Box::new(Conv2d::new("mix1.b3.conv2", 4, 6, 3, 1, 1, rng)),
            Box::new(ReLU::new()),
            Box::new(Conv2d::new("mix1.b3.conv3", 6, 6, 3, 1, 1, rng)),
            Box::new(ReLU::new()),
        ]),
    ]));
    // reduction: bottleneck then strided 3x3
    net.push(Conv2d::new("reduce.conv1", 24, 16, 1, 1, 0, rng));
    net.push(ReLU::new());
    net.push(Conv2d::new("reduce.conv2", 16, 32, 3, 2, 1, rng));
    net.push(ReLU::new());
    // second mixed module: 32 -> 16 + 16 = 32 channels
    net.push(MultiBranch::new(vec![
        branch(vec![
            Box::new(Conv2d::new("mix2.b1.conv1", 32, 16, 1, 1, 0, rng)),
            Box::new(ReLU::new()),
        ]),
        branch(vec![
            Box::new(Conv2d::new("mix2.b2.conv1", 32, 8, 1, 1, 0, rng)),
            Box::new(ReLU::new()),
            Box::new(Conv2d::new("mix2.b2.conv2", 8, 16, 3, 1, 1, rng)),
            Box::new(ReLU::new()),
        ]),
    ]));
    (net, 32)
}

/// Fused expand/project block: strided 3x3 expansion convolution, SiLU,
/// then a 1x1 projection; identity residual when the shape is preserved.
fn fused_block(
    name: &str,
    in_ch: usize,
    out_ch: usize,
    expand: usize,
    stride: usize,
    rng: &mut SplitMix64,
) -> Box<dyn crate::nn::Layer> {
    let mid = in_ch * expand;
    let mut main = Sequential::default();
    main.push(Conv2d::new(&format!("{name}.expand"), in_ch, mid, 3, stride, 1, rng));
    main.push(SiLU::new());
    main.push(Conv2d::new(&format!("{name}.project"), mid, out_ch, 1, 1, 0, rng));
    if stride == 1 && in_ch == out_ch {
        Box::new(Residual::new(main, None))
    } else {
        Box::new(main)
    }
}

/// Fused expand/project stages with SiLU activations.
fn build_fused(rng: &mut SplitMix64) -> (Sequential, usize) {
    let mut net = Sequential::default();
    net.push(Conv2d::new("stem", 3, 8, 3, 2, 1, rng));
    net.push(SiLU::new());
    net.push(MaxPool2::new());
    net.layers.push(fused_block("fused1", 8, 16, 2, 2, rng));
    net.layers.push(fused_block("fused2", 16, 24, 2, 2, rng));
    net.layers.push(fused_block("fused3", 24, 24, 2, 1, rng));
    net.layers.push(fused_block("fused4", 24, 32, 2, 2, rng));
    net.push(Conv2d::new("top", 32, 64, 1, 1, 0, rng));
    net.push(SiLU::new());
    (net, 64)
}
