//! Canned gradient-verification runs: one tiny graph per operation kind,
//! each full network, and the two cross-network training flows. The CLI and
//! the test suite both drive these.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::exec::Binding;
use crate::graph::gradcheck::{grad_check, GradCheckReport};
use crate::graph::{GraphBuilder, NodeId};
use crate::nets::{
    build_discriminator, build_emulator, build_generator, build_siamese, init_discriminator,
    init_emulator, init_generator, init_siamese, NetConfig, Network, IMG_PIXELS, IMG_SIDE,
    LEAKY_SLOPE,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn seeded(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(salt))
}

/// Random values of moderate size; activations stay well away from their
/// saturation plateaus so finite differences remain informative.
fn randn_vec(n: usize, std: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = vec![0.0; n];
    crate::rng::fill_standard_normal(rng, &mut out);
    out.iter_mut().for_each(|v| *v *= std);
    out
}

/// Wraps plain arrays as parameters of a scratch network so the checker can
/// perturb them; every differentiable quantity in these graphs is a param.
fn scratch_net(tensors: &[(&str, &[usize], Vec<f32>)]) -> Network {
    let mut net = Network::new("t");
    for (name, shape, data) in tensors {
        net.add(name, Tensor::from_vec(shape, data.clone()).unwrap());
    }
    net
}

fn check_scratch(
    net: &Network,
    build: impl FnOnce(&mut GraphBuilder) -> Result<NodeId>,
    inputs: &[(&str, &[f32])],
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut b = GraphBuilder::new();
    let loss = build(&mut b)?;
    grad_check(b.build(), loss, &[net], &[Binding::trainable("t")], inputs, eps, probes, seed)
}

/// Sum of squares pulls a scalar loss out of any shape with a non-constant
/// gradient (2y), which exercises the chain rule at every probe.
fn sum_sq(b: &mut GraphBuilder, y: NodeId) -> NodeId {
    let s = b.square(y);
    b.reduce_sum(s)
}

/// One finite-difference check per operation kind, on small dedicated
/// graphs. Cheap enough to run at several random initializations.
pub fn op_checks(eps: f64, probes: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, report: GradCheckReport| {
        out.push(SuiteEntry { name, report });
    };

    {
        let mut r = seeded(seed, 1);
        let net = scratch_net(&[
            ("x", &[3, 4], randn_vec(12, 1.0, &mut r)),
            ("w", &[4, 2], randn_vec(8, 1.0, &mut r)),
        ]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[3, 4]);
                let w = b.param("t", "w", &[4, 2]);
                let y = b.matmul(x, w)?;
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:matmul", rep);
    }

    {
        let mut r = seeded(seed, 2);
        let net = scratch_net(&[
            ("x", &[3, 5], randn_vec(15, 1.0, &mut r)),
            ("b", &[5], randn_vec(5, 1.0, &mut r)),
        ]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[3, 5]);
                let bias = b.param("t", "b", &[5]);
                let y = b.bias_add(x, bias)?;
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:bias_add_dense", rep);
    }

    {
        let mut r = seeded(seed, 3);
        let net = scratch_net(&[
            ("x", &[2, 3, 4, 4], randn_vec(96, 1.0, &mut r)),
            ("b", &[3], randn_vec(3, 1.0, &mut r)),
        ]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[2, 3, 4, 4]);
                let bias = b.param("t", "b", &[3]);
                let y = b.bias_add(x, bias)?;
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:bias_add_conv", rep);
    }

    for (name, stride, salt) in [("op:conv2d_stride1", 1usize, 4u64), ("op:conv2d_stride2", 2, 5)] {
        let mut r = seeded(seed, salt);
        let net = scratch_net(&[
            ("x", &[2, 2, 8, 8], randn_vec(256, 0.5, &mut r)),
            ("k", &[3, 2, 5, 5], randn_vec(150, 0.3, &mut r)),
        ]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[2, 2, 8, 8]);
                let k = b.param("t", "k", &[3, 2, 5, 5]);
                let y = b.conv2d(x, k, stride, 2)?;
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push(name, rep);
    }

    {
        let mut r = seeded(seed, 6);
        let net = scratch_net(&[("x", &[2, 2, 3, 3], randn_vec(36, 1.0, &mut r))]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[2, 2, 3, 3]);
                let y = b.upsample2x(x)?;
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:upsample2x", rep);
    }

    {
        let mut r = seeded(seed, 7);
        let net = scratch_net(&[("x", &[2, 12], randn_vec(24, 1.0, &mut r))]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[2, 12]);
                let y = b.reshape(x, &[2, 3, 2, 2])?;
                let y = b.upsample2x(y)?;
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:reshape", rep);
    }

    {
        let mut r = seeded(seed, 8);
        let net = scratch_net(&[("x", &[3, 7], randn_vec(21, 1.0, &mut r))]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[3, 7]);
                let y = b.tanh(x);
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:tanh", rep);
    }

    {
        let mut r = seeded(seed, 9);
        let net = scratch_net(&[("x", &[3, 7], randn_vec(21, 1.0, &mut r))]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[3, 7]);
                let y = b.sigmoid(x);
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:sigmoid", rep);
    }

    {
        let mut r = seeded(seed, 10);
        // Nudged away from zero: the kink at the origin has no derivative,
        // so a probe straddling it would measure the kink, not a bug.
        let vals: Vec<f32> = randn_vec(21, 1.0, &mut r)
            .into_iter()
            .map(|v| v + 0.1 * v.signum())
            .collect();
        let net = scratch_net(&[("x", &[3, 7], vals)]);
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[3, 7]);
                let y = b.leaky_relu(x, LEAKY_SLOPE);
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:leaky_relu", rep);
    }

    {
        let mut r = seeded(seed, 11);
        let net = scratch_net(&[
            ("a", &[4, 6], randn_vec(24, 1.0, &mut r)),
            ("b", &[4, 6], randn_vec(24, 1.0, &mut r)),
        ]);
        let rep = check_scratch(
            &net,
            |b| {
                let a = b.param("t", "a", &[4, 6]);
                let bb = b.param("t", "b", &[4, 6]);
                let y = b.sub(a, bb)?;
                Ok(sum_sq(b, y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:sub_square", rep);
    }

    {
        let mut r = seeded(seed, 15);
        let net = scratch_net(&[
            ("a", &[4, 6], randn_vec(24, 1.0, &mut r)),
            ("b", &[4, 6], randn_vec(24, 1.0, &mut r)),
        ]);
        // Plain sum on top so the norm's x/||x|| gradient is probed as-is
        // instead of collapsing against a squaring layer.
        let rep = check_scratch(
            &net,
            |b| {
                let a = b.param("t", "a", &[4, 6]);
                let bb = b.param("t", "b", &[4, 6]);
                let y = b.sub(a, bb)?;
                let y = b.row_norm(y)?;
                Ok(b.reduce_sum(y))
            },
            &[],
            eps,
            probes,
            seed,
        )?;
        push("op:row_norm", rep);
    }

    {
        let mut r = seeded(seed, 12);
        let net = scratch_net(&[("x", &[5, 2], randn_vec(10, 1.0, &mut r))]);
        let labels = [1.0f32, 0.0, 1.0, 1.0, 0.0, 0.3, 0.85, 0.1, 0.95, 0.2];
        let rep = check_scratch(
            &net,
            |b| {
                let x = b.param("t", "x", &[5, 2]);
                let p = b.sigmoid(x);
                let t = b.input("labels", &[5, 2])?;
                b.bce(p, t)
            },
            &[("labels", &labels)],
            eps,
            probes,
            seed,
        )?;
        push("op:sigmoid_bce", rep);
    }

    {
        let mut r = seeded(seed, 13);
        let net = scratch_net(&[
            ("w1", &[6, 5], randn_vec(30, 0.8, &mut r)),
            ("b1", &[5], randn_vec(5, 0.2, &mut r)),
            ("w2", &[5, 2], randn_vec(10, 0.8, &mut r)),
            ("b2", &[2], randn_vec(2, 0.2, &mut r)),
        ]);
        let z = randn_vec(4 * 6, 1.0, &mut seeded(seed, 14));
        let labels = [1.0f32, 0.0, 0.7, 0.2, 1.0, 0.1, 0.9, 0.0];
        let rep = check_scratch(
            &net,
            |b| {
                let zin = b.input("z", &[4, 6])?;
                let w1 = b.param("t", "w1", &[6, 5]);
                let b1 = b.param("t", "b1", &[5]);
                let w2 = b.param("t", "w2", &[5, 2]);
                let b2 = b.param("t", "b2", &[2]);
                let h = b.matmul(zin, w1)?;
                let h = b.bias_add(h, b1)?;
                let h = b.leaky_relu(h, LEAKY_SLOPE);
                let h = b.matmul(h, w2)?;
                let h = b.bias_add(h, b2)?;
                let p = b.sigmoid(h);
                let t = b.input("labels", &[4, 2])?;
                b.bce(p, t)
            },
            &[("z", &z), ("labels", &labels)],
            eps,
            probes,
            seed,
        )?;
        push("net:mlp2", rep);
    }

    Ok(out)
}

/// Finite-difference checks of each full network and of the two composite
/// training flows where gradient crosses a frozen network.
pub fn network_checks(eps: f64, probes: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let cfg = NetConfig::default();
    let n_params = 4;
    let batch = 2;
    let mut r = seeded(seed, 100);
    let gnet = init_generator(&cfg, n_params, &mut r);
    let enet = init_emulator(&cfg, n_params, &mut r);
    let dnet = init_discriminator(&cfg, &mut r);
    let snet = init_siamese(&cfg, &mut r);

    let z = randn_vec(batch * cfg.noise_dim, 1.0, &mut r);
    let p: Vec<f32> = randn_vec(batch * n_params, 0.5, &mut r)
        .into_iter()
        .map(|v| v.clamp(-0.95, 0.95))
        .collect();
    let img_a = randn_vec(batch * IMG_PIXELS, 0.4, &mut r);
    let img_b = randn_vec(batch * IMG_PIXELS, 0.4, &mut r);
    let pos = [0.9f32, 1.1];
    let neg = [0.1f32, 0.2];

    let mut out = Vec::new();

    {
        let mut b = GraphBuilder::new();
        let zin = b.input("z", &[batch, cfg.noise_dim])?;
        let y = build_generator(&mut b, &gnet, zin)?;
        let loss = sum_sq(&mut b, y);
        let rep = grad_check(
            b.build(),
            loss,
            &[&gnet],
            &[Binding::trainable("G")],
            &[("z", &z)],
            eps,
            probes,
            seed,
        )?;
        out.push(SuiteEntry { name: "net:generator", report: rep });
    }

    {
        let mut b = GraphBuilder::new();
        let pin = b.input("p", &[batch, n_params])?;
        let y = build_emulator(&mut b, &enet, pin)?;
        let loss = sum_sq(&mut b, y);
        let rep = grad_check(
            b.build(),
            loss,
            &[&enet],
            &[Binding::trainable("E")],
            &[("p", &p)],
            eps,
            probes,
            seed,
        )?;
        out.push(SuiteEntry { name: "net:emulator", report: rep });
    }

    {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
        let score = build_discriminator(&mut b, &dnet, x)?;
        let t = b.input("labels", &[batch, 1])?;
        let loss = b.bce(score, t)?;
        let rep = grad_check(
            b.build(),
            loss,
            &[&dnet],
            &[Binding::trainable("D")],
            &[("x", &img_a), ("labels", &pos)],
            eps,
            probes,
            seed,
        )?;
        out.push(SuiteEntry { name: "net:discriminator", report: rep });
    }

    {
        let mut b = GraphBuilder::new();
        let a = b.input("a", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
        let bb = b.input("b", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
        let score = build_siamese(&mut b, &snet, a, bb)?;
        let t = b.input("labels", &[batch, 1])?;
        let loss = b.bce(score, t)?;
        let rep = grad_check(
            b.build(),
            loss,
            &[&snet],
            &[Binding::trainable("S")],
            &[("a", &img_a), ("b", &img_b), ("labels", &neg)],
            eps,
            probes,
            seed,
        )?;
        out.push(SuiteEntry { name: "net:siamese", report: rep });
    }

    // Emulator learning through a frozen Siamese, as in pretraining.
    {
        let mut b = GraphBuilder::new();
        let pin = b.input("p", &[batch, n_params])?;
        let sim = b.input("sim", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
        let emu = build_emulator(&mut b, &enet, pin)?;
        let score = build_siamese(&mut b, &snet, sim, emu)?;
        let t = b.input("labels", &[batch, 1])?;
        let loss = b.bce(score, t)?;
        let rep = grad_check(
            b.build(),
            loss,
            &[&enet, &snet],
            &[Binding::trainable("E"), Binding::frozen("S")],
            &[("p", &p), ("sim", &img_a), ("labels", &pos)],
            eps,
            probes,
            seed,
        )?;
        out.push(SuiteEntry { name: "flow:emulator_vs_siamese", report: rep });
    }

    // Generator learning through frozen emulator and discriminator.
    {
        let mut b = GraphBuilder::new();
        let zin = b.input("z", &[batch, cfg.noise_dim])?;
        let params = build_generator(&mut b, &gnet, zin)?;
        let img = build_emulator(&mut b, &enet, params)?;
        let score = build_discriminator(&mut b, &dnet, img)?;
        let t = b.input("labels", &[batch, 1])?;
        let loss = b.bce(score, t)?;
        let rep = grad_check(
            b.build(),
            loss,
            &[&gnet, &enet, &dnet],
            &[Binding::trainable("G"), Binding::frozen("E"), Binding::frozen("D")],
            &[("z", &z), ("labels", &pos)],
            eps,
            probes,
            seed,
        )?;
        out.push(SuiteEntry { name: "flow:generator_vs_discriminator", report: rep });
    }

    Ok(out)
}

/// Everything: per-operation, per-network and cross-network checks.
pub fn full_suite(eps: f64, probes: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = op_checks(eps, probes, seed)?;
    out.extend(network_checks(eps, probes, seed)?);
    Ok(out)
}
