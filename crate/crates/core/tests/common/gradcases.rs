//! Finite-difference cases for every differentiable op and composite layer.

use std::rc::Rc;

use motionseg::autodiff::{BatchNormStats, Conv2dSpec, Mode, ParamKind, ParamStore, Tape, Tensor, Var};
use motionseg::lidar_io::{generate_synthetic_sequence, SyntheticConfig};
use motionseg::losses::LovaszClasses;
use motionseg::network::{
    BranchMode, Builder, MetaKernel, MotionAttention, MultiScaleBlock, NetInput, NetworkConfig, PoolKind, RangeNet,
    ResContextBlock, UnitStyle,
};
use motionseg::point_refine::{PointGeometry, PointHead, PointHeadConfig, Rulebook, VoxelAggregate};
use motionseg::projection::{build_range_image, ProjectionConfig};
use rand::Rng;

use super::{
    grad_check, grad_check_with, rng, signed, uniform, GradReport, CHECKED_PER_TENSOR_NETWORK, FD_STEP,
    FD_STEPS_NETWORK,
};

pub type Case = (&'static str, fn(u64) -> GradReport);

pub fn cases() -> Vec<Case> {
    vec![
        ("add_broadcast", add_broadcast),
        ("mul_broadcast", mul_broadcast),
        ("scale", scale),
        ("sigmoid", sigmoid),
        ("tanh", tanh),
        ("relu", relu),
        ("leaky_relu", leaky_relu),
        ("sum", sum),
        ("mean", mean),
        ("softmax", softmax),
        ("dropout", dropout),
        ("conv2d_same", conv2d_same),
        ("conv2d_dilated_circular", conv2d_dilated_circular),
        ("conv2d_strided", conv2d_strided),
        ("conv2d_even_kernel", conv2d_even_kernel),
        ("linear", linear),
        ("batch_norm_train", batch_norm_train),
        ("batch_norm_eval", batch_norm_eval),
        ("avg_pool2d", avg_pool2d),
        ("mean_spatial", mean_spatial),
        ("softpool2d", softpool2d),
        ("reshape", reshape),
        ("pixel_shuffle", pixel_shuffle),
        ("concat", concat),
        ("nchw_to_rows", nchw_to_rows),
        ("neighbors3x3", neighbors3x3),
        ("gather_rows", gather_rows),
        ("segment_mean", segment_mean),
        ("segment_max", segment_max),
        ("sparse_conv3d", sparse_conv3d),
        ("weighted_cross_entropy", weighted_cross_entropy),
        ("lovasz_softmax", lovasz_softmax),
        ("combined_loss", combined_loss),
        ("res_context_block", res_context_block),
        ("multi_scale_block", multi_scale_block),
        ("meta_kernel", meta_kernel),
        ("motion_attention", motion_attention),
        ("network_8x16", network_8x16),
        ("network_8x16_linear_units", network_8x16_linear_units),
        ("network_8x16_concat_avgpool", network_8x16_concat_avgpool),
        ("point_head", point_head),
        ("point_head_max", point_head_max),
    ]
}

fn no_params(
    seed: u64,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&Tape<f64>, &[Var]) -> motionseg::Result<Var>,
) -> GradReport {
    let mut store = ParamStore::new();
    grad_check(&mut store, inputs, Mode::Train, seed, |t, _, v| f(t, v))
}

fn add_broadcast(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0);
    let b = uniform(&mut r, &[1, 3, 1, 5], -1.0, 1.0);
    no_params(seed, vec![a, b], |t, v| t.add(v[0], v[1]))
}

fn mul_broadcast(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0);
    let b = uniform(&mut r, &[2, 1, 4, 1], -1.0, 1.0);
    no_params(seed, vec![a, b], |t, v| t.mul(v[0], v[1]))
}

fn scale(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[3, 7], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| Ok(t.scale(v[0], -1.7)))
}

fn sigmoid(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[4, 6], -3.0, 3.0);
    no_params(seed, vec![a], |t, v| Ok(t.sigmoid(v[0])))
}

fn tanh(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[4, 6], -2.0, 2.0);
    no_params(seed, vec![a], |t, v| Ok(t.tanh(v[0])))
}

fn relu(seed: u64) -> GradReport {
    let a = signed(&mut rng(seed), &[5, 6]);
    no_params(seed, vec![a], |t, v| Ok(t.relu(v[0])))
}

fn leaky_relu(seed: u64) -> GradReport {
    let a = signed(&mut rng(seed), &[5, 6]);
    no_params(seed, vec![a], |t, v| Ok(t.leaky_relu(v[0], 0.01)))
}

fn sum(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[3, 4, 2], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| Ok(t.sum(v[0])))
}

fn mean(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[3, 4, 2], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| Ok(t.mean(v[0])))
}

fn softmax(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[2, 4, 3, 3], -2.0, 2.0);
    no_params(seed, vec![a], |t, v| {
        let s1 = t.softmax(v[0], 1)?;
        let s0 = t.softmax(v[0], 0)?;
        let s3 = t.softmax(v[0], 3)?;
        let x = t.add(s1, s0)?;
        t.add(x, s3)
    })
}

fn dropout(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[4, 5, 3], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| Ok(t.dropout(v[0], 0.3)))
}

fn conv_case(seed: u64, x_shape: [usize; 4], w_shape: [usize; 4], spec: Conv2dSpec, bias: bool) -> GradReport {
    let mut r = rng(seed);
    let x = uniform(&mut r, &x_shape, -1.0, 1.0);
    let w = uniform(&mut r, &w_shape, -0.5, 0.5);
    let b = uniform(&mut r, &[w_shape[0]], -0.5, 0.5);
    no_params(seed, vec![x, w, b], move |t, v| {
        t.conv2d(v[0], v[1], bias.then_some(v[2]), spec)
    })
}

fn conv2d_same(seed: u64) -> GradReport {
    conv_case(seed, [2, 3, 5, 6], [4, 3, 3, 3], Conv2dSpec::same(3, 1, false), true)
}

fn conv2d_dilated_circular(seed: u64) -> GradReport {
    conv_case(seed, [1, 2, 6, 7], [3, 2, 3, 3], Conv2dSpec::same(3, 2, true), true)
}

fn conv2d_strided(seed: u64) -> GradReport {
    let spec = Conv2dSpec {
        stride: (2, 2),
        dilation: (1, 1),
        padding: (1, 0),
        circular_width: false,
    };
    conv_case(seed, [2, 2, 6, 7], [3, 2, 3, 2], spec, false)
}

fn conv2d_even_kernel(seed: u64) -> GradReport {
    conv_case(seed, [1, 3, 5, 6], [2, 3, 2, 2], Conv2dSpec::same(2, 2, true), true)
}

fn linear(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[5, 4], -1.0, 1.0);
    let w = uniform(&mut r, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut r, &[3], -1.0, 1.0);
    no_params(seed, vec![x, w, b], |t, v| t.linear(v[0], v[1], Some(v[2])))
}

fn batch_norm_case(seed: u64, mode: Mode) -> GradReport {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[3, 4, 2, 3], -2.0, 2.0);
    let gamma = uniform(&mut r, &[4], 0.5, 1.5);
    let beta = uniform(&mut r, &[4], -0.5, 0.5);
    let mut store = ParamStore::new();
    let stats = BatchNormStats {
        running_mean: store.add("mean", uniform(&mut r, &[4], -0.3, 0.3), ParamKind::Buffer),
        running_var: store.add("var", uniform(&mut r, &[4], 0.5, 2.0), ParamKind::Buffer),
        momentum: 0.1,
        eps: 1e-5,
    };
    grad_check(&mut store, vec![x, gamma, beta], mode, seed, move |t, s, v| {
        t.batch_norm(v[0], v[1], v[2], s, stats)
    })
}

fn batch_norm_train(seed: u64) -> GradReport {
    batch_norm_case(seed, Mode::Train)
}

fn batch_norm_eval(seed: u64) -> GradReport {
    batch_norm_case(seed, Mode::Eval)
}

fn avg_pool2d(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[2, 3, 4, 6], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| t.avg_pool2d(v[0], (2, 2)))
}

fn mean_spatial(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[2, 3, 4, 5], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| t.mean_spatial(v[0]))
}

fn softpool2d(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[2, 3, 4, 6], -2.0, 2.0);
    no_params(seed, vec![a], |t, v| t.softpool2d(v[0], (2, 2)))
}

fn reshape(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[2, 3, 4], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| {
        let y = t.reshape(v[0], &[6, 4])?;
        let w = t.constant(Tensor::from_fn(&[6, 4], |i| i as f64 * 0.1));
        t.mul(y, w)
    })
}

fn pixel_shuffle(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[2, 8, 3, 2], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| t.pixel_shuffle(v[0], 2))
}

fn concat(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[2, 3, 2, 2], -1.0, 1.0);
    let b = uniform(&mut r, &[2, 1, 2, 2], -1.0, 1.0);
    let c = uniform(&mut r, &[1, 4, 2, 2], -1.0, 1.0);
    no_params(seed, vec![a, b, c], |t, v| {
        let ab = t.concat(&[v[0], v[1]], 1)?;
        t.concat(&[ab, v[2]], 0)
    })
}

fn nchw_to_rows(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[2, 3, 2, 4], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| t.nchw_to_rows(v[0]))
}

fn neighbors3x3(seed: u64) -> GradReport {
    let a = uniform(&mut rng(seed), &[2, 2, 3, 4], -1.0, 1.0);
    no_params(seed, vec![a], |t, v| {
        let c = t.neighbors3x3(v[0], true)?;
        let z = t.neighbors3x3(v[0], false)?;
        t.concat(&[c, z], 0)
    })
}

fn gather_rows(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[5, 3], -1.0, 1.0);
    let index: Vec<Option<u32>> = (0..9)
        .map(|_| r.random_bool(0.8).then(|| r.random_range(0..5)))
        .collect();
    let index = Rc::new(index);
    no_params(seed, vec![x], move |t, v| t.gather_rows(v[0], index.clone()))
}

fn segments(r: &mut rand_chacha::ChaCha8Rng, n: usize, k: usize) -> Rc<Vec<u32>> {
    Rc::new(
        (0..n)
            .map(|i| if i < k { i as u32 } else { r.random_range(0..k as u32) })
            .collect(),
    )
}

fn segment_mean(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[10, 3], -1.0, 1.0);
    let seg = segments(&mut r, 10, 4);
    no_params(seed, vec![x], move |t, v| t.segment_mean(v[0], seg.clone(), 4))
}

fn segment_max(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[10, 3], -1.0, 1.0);
    let seg = segments(&mut r, 10, 4);
    no_params(seed, vec![x], move |t, v| t.segment_max(v[0], seg.clone(), 4))
}

fn sparse_conv3d(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut coords: Vec<[i32; 3]> = Vec::new();
    while coords.len() < 12 {
        let c = [r.random_range(0..3), r.random_range(0..3), r.random_range(0..3)];
        if !coords.contains(&c) {
            coords.push(c);
        }
    }
    let rules = Rc::new(Rulebook::new(&coords));
    let x = uniform(&mut r, &[12, 3], -1.0, 1.0);
    let w = uniform(&mut r, &[27, 3, 2], -0.5, 0.5);
    let b = uniform(&mut r, &[2], -0.5, 0.5);
    no_params(seed, vec![x, w, b], move |t, v| {
        t.sparse_conv3d(v[0], v[1], Some(v[2]), rules.clone())
    })
}

fn truth(r: &mut rand_chacha::ChaCha8Rng, n: usize, k: usize) -> Rc<Vec<Option<usize>>> {
    Rc::new(
        (0..n)
            .map(|_| r.random_bool(0.9).then(|| r.random_range(0..k)))
            .collect(),
    )
}

fn weighted_cross_entropy(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let logits = uniform(&mut r, &[12, 3], -2.0, 2.0);
    let y = truth(&mut r, 12, 3);
    no_params(seed, vec![logits], move |t, v| {
        let p = t.softmax(v[0], 1)?;
        Ok(t.weighted_cross_entropy(p, y.clone(), &[0.5, 1.0, 2.0])?.loss)
    })
}

fn lovasz_softmax(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let logits = uniform(&mut r, &[16, 3], -2.0, 2.0);
    let y = truth(&mut r, 16, 3);
    no_params(seed, vec![logits], move |t, v| {
        let p = t.softmax(v[0], 1)?;
        let a = t.lovasz_softmax(p, y.clone(), &LovaszClasses::Present)?;
        let b = t.lovasz_softmax(p, y.clone(), &LovaszClasses::All)?;
        let c = t.lovasz_softmax(p, y.clone(), &LovaszClasses::Subset(vec![1]))?;
        let ab = t.add(a, b)?;
        t.add(ab, c)
    })
}

fn combined_loss(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let logits = uniform(&mut r, &[14, 2], -2.0, 2.0);
    let y = truth(&mut r, 14, 2);
    no_params(seed, vec![logits], move |t, v| {
        let p = t.softmax(v[0], 1)?;
        Ok(t.combined_loss(p, y.clone(), &[0.7, 1.3], &LovaszClasses::Present)?
            .total)
    })
}

const STYLE: UnitStyle = UnitStyle {
    slope: 0.01,
    momentum: 0.1,
    circular: true,
};

fn res_context_block(seed: u64) -> GradReport {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let block = ResContextBlock::new(&mut Builder::new(&mut store, &mut r, "b"), 3, 4, STYLE);
    let x = uniform(&mut r, &[2, 3, 4, 6], -1.0, 1.0);
    grad_check(&mut store, vec![x], Mode::Train, seed, move |t, s, v| {
        block.forward(t, s, v[0])
    })
}

fn multi_scale_block(seed: u64) -> GradReport {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let with = MultiScaleBlock::new(&mut Builder::new(&mut store, &mut r, "a"), 3, 4, true, STYLE);
    let without = MultiScaleBlock::new(&mut Builder::new(&mut store, &mut r, "b"), 4, 2, false, STYLE);
    let x = uniform(&mut r, &[2, 3, 4, 6], -1.0, 1.0);
    grad_check(&mut store, vec![x], Mode::Train, seed, move |t, s, v| {
        let y = with.forward(t, s, v[0])?;
        without.forward(t, s, y)
    })
}

fn meta_kernel(seed: u64) -> GradReport {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let mk = MetaKernel::new(&mut Builder::new(&mut store, &mut r, "mk"), 3, 4, 5, true);
    let coords = uniform(&mut r, &[1, 3, 4, 5], -3.0, 3.0);
    let valid: Vec<bool> = (0..20).map(|_| r.random_bool(0.85)).collect();
    let x = uniform(&mut r, &[1, 3, 4, 5], -1.0, 1.0);
    grad_check(&mut store, vec![x], Mode::Train, seed, move |t, s, v| {
        mk.forward(t, s, v[0], &coords, &valid)
    })
}

fn motion_attention(seed: u64) -> GradReport {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let att = MotionAttention::new(&mut Builder::new(&mut store, &mut r, "att"), 4, 2);
    let fa = uniform(&mut r, &[2, 4, 3, 4], -1.0, 1.0);
    let fm = uniform(&mut r, &[2, 2, 3, 4], -1.0, 1.0);
    grad_check(&mut store, vec![fa, fm], Mode::Train, seed, move |t, s, v| {
        let out = att.forward(t, s, v[0], v[1])?;
        t.concat(&[out.gated, out.fused], 1)
    })
}

pub fn net_input(seed: u64, cfg: &NetworkConfig) -> NetInput<f64> {
    let mut r = rng(seed ^ 0x5eed);
    let (h, w) = (cfg.height, cfg.width);
    let range = Tensor::from_fn(&[1, 5, h, w], |i| {
        let c = (i / (h * w)) % 5;
        let v: f64 = r.random_range(0.5..4.0);
        if c == 3 {
            v + 1.0
        } else {
            v - 2.0
        }
    });
    let mut data = range.into_data();
    for p in 0..h * w {
        if r.random_bool(0.1) {
            for c in 0..5 {
                data[c * h * w + p] = -1.0;
            }
        }
    }
    let range = Tensor::new(vec![1, 5, h, w], data).unwrap();
    let residuals = uniform(&mut r, &[1, cfg.n_res, h, w], -0.5, 0.5);
    NetInput::from_tensors(range, residuals).unwrap()
}

fn network_case(seed: u64, cfg: NetworkConfig, steps: &[f64]) -> GradReport {
    let mut store = ParamStore::new();
    let net = RangeNet::new(cfg.clone(), &mut store, seed).unwrap();
    let input = net_input(seed, &cfg);
    grad_check_with(
        &mut store,
        vec![],
        Mode::Train,
        seed,
        steps,
        CHECKED_PER_TENSOR_NETWORK,
        move |t, s, _| Ok(net.forward(t, s, &input)?.probs),
    )
}

fn network_8x16(seed: u64) -> GradReport {
    network_case(seed, NetworkConfig::tiny(8, 16), &FD_STEPS_NETWORK)
}

/// Unit slope removes every kink from the network.
fn network_8x16_linear_units(seed: u64) -> GradReport {
    let mut cfg = NetworkConfig::tiny(8, 16);
    cfg.leaky_slope = 1.0;
    network_case(seed, cfg, &[FD_STEP])
}

fn network_8x16_concat_avgpool(seed: u64) -> GradReport {
    let mut cfg = NetworkConfig::tiny(8, 16);
    cfg.mode = BranchMode::Concat;
    cfg.pool = PoolKind::Average;
    cfg.meta_kernel = false;
    network_case(seed, cfg, &FD_STEPS_NETWORK)
}

fn point_head_case(seed: u64, aggregate: VoxelAggregate) -> GradReport {
    let mut sc = SyntheticConfig::street(2, 8, 32);
    sc.movers[0].center = [4.0, -1.0, 0.8];
    let seq = generate_synthetic_sequence(&sc).unwrap();
    let cloud = seq.frame(0).cloud.clone();
    let image = build_range_image(&cloud, &ProjectionConfig::with_size(8, 16));
    let cfg = PointHeadConfig {
        voxel_size: 1.0,
        hidden: 4,
        sparse_layers: 1,
        mlp_layers: 1,
        aggregate,
    };
    let mut store = ParamStore::new();
    let head = PointHead::new(cfg, 3, 2, &mut store, seed).unwrap();
    let geom = PointGeometry::new(&cloud, 1.0).unwrap();
    let rows = uniform(&mut rng(seed), &[2 * 8 * 16, 3], -1.0, 1.0);
    grad_check(&mut store, vec![rows], Mode::Train, seed, move |t, s, v| {
        Ok(head.forward(t, s, v[0], 8 * 16, &cloud, &image, &geom)?.probs)
    })
}

fn point_head(seed: u64) -> GradReport {
    point_head_case(seed, VoxelAggregate::Mean)
}

fn point_head_max(seed: u64) -> GradReport {
    point_head_case(seed, VoxelAggregate::Max)
}
