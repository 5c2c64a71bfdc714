//! The four networks of the adversarial game: generator G, emulator E,
//! discriminator D and Siamese S.
//!
//! A [`Network`] is an ordered bag of named parameter tensors. Architectures
//! are expressed as graph-builder functions that read every layer size from
//! the tensors themselves, so a network restored from a checkpoint rebuilds
//! its graph without any side channel. Layer widths are chosen at
//! initialization time from [`NetConfig`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::exec::{Binding, Executor};
use crate::graph::{GraphBuilder, NodeId};
use crate::tensor::Tensor;

/// Slope of the leaky rectifier used in every hidden layer.
pub const LEAKY_SLOPE: f32 = 0.2;

/// Std-dev of the zero-mean normal used for weight initialization.
pub const INIT_STD: f32 = 0.02;

/// Length of the Siamese encoding vector; fixed by contract.
pub const ENCODING_LEN: usize = 128;

/// Image geometry shared with the simulators.
pub const IMG_SIDE: usize = crate::simulators::image::SIDE;

pub const IMG_PIXELS: usize = crate::simulators::image::PIXELS;

/// Layer widths used when initializing fresh networks. Restored networks
/// carry their sizes in the checkpoint, so this only matters at init.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub noise_dim: usize,
    pub gen_hidden: usize,
    /// Channel count of the emulator's 7x7 seed block.
    pub emu_base_ch: usize,
    pub emu_mid_ch: usize,
    pub emu_late_ch: usize,
    pub disc_ch1: usize,
    pub disc_ch2: usize,
    pub disc_dense: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            noise_dim: 64,
            gen_hidden: 128,
            emu_base_ch: 64,
            emu_mid_ch: 32,
            emu_late_ch: 16,
            disc_ch1: 16,
            disc_ch2: 32,
            disc_dense: 128,
        }
    }
}

/// Named, ordered parameter storage for one network.
#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    params: Vec<(String, Tensor)>,
}

impl Network {
    pub fn new(name: &str) -> Self {
        Network { name: name.to_string(), params: Vec::new() }
    }

    pub fn from_parts(name: &str, params: Vec<(String, Tensor)>) -> Result<Self> {
        let mut net = Network::new(name);
        for (pname, t) in params {
            if net.index_of(&pname).is_some() {
                return Err(Error::Param(format!("duplicate parameter `{name}.{pname}`")));
            }
            net.params.push((pname, t));
        }
        Ok(net)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn add(&mut self, pname: &str, t: Tensor) {
        assert!(self.index_of(pname).is_none(), "duplicate parameter {pname}");
        self.params.push((pname.to_string(), t));
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, pname: &str) -> Option<usize> {
        self.params.iter().position(|(n, _)| n == pname)
    }

    pub fn param(&self, idx: usize) -> &Tensor {
        &self.params[idx].1
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].1
    }

    pub fn param_name(&self, idx: usize) -> &str {
        &self.params[idx].0
    }

    pub fn get(&self, pname: &str) -> Option<&Tensor> {
        self.index_of(pname).map(|i| self.param(i))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn reset_grads(&mut self) {
        for (_, t) in &mut self.params {
            t.reset_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|(_, t)| t.all_finite())
    }

    fn add_dense(&mut self, prefix: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) {
        self.add(&format!("{prefix}.w"), Tensor::randn(&[d_in, d_out], INIT_STD, rng));
        self.add(&format!("{prefix}.b"), Tensor::zeros(&[d_out]));
    }

    fn add_conv(&mut self, prefix: &str, out_ch: usize, in_ch: usize, k: usize, rng: &mut impl Rng) {
        self.add(&format!("{prefix}.k"), Tensor::randn(&[out_ch, in_ch, k, k], INIT_STD, rng));
        self.add(&format!("{prefix}.b"), Tensor::zeros(&[out_ch]));
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

pub fn init_generator(cfg: &NetConfig, n_params: usize, rng: &mut impl Rng) -> Network {
    let mut net = Network::new("G");
    net.add_dense("fc1", cfg.noise_dim, cfg.gen_hidden, rng);
    net.add_dense("fc2", cfg.gen_hidden, cfg.gen_hidden, rng);
    net.add_dense("fc3", cfg.gen_hidden, n_params, rng);
    net
}

pub fn init_emulator(cfg: &NetConfig, n_params: usize, rng: &mut impl Rng) -> Network {
    let side = IMG_SIDE / 4;
    let mut net = Network::new("E");
    net.add_dense("fc", n_params, side * side * cfg.emu_base_ch, rng);
    net.add_conv("conv1", cfg.emu_mid_ch, cfg.emu_base_ch, 5, rng);
    net.add_conv("conv2", cfg.emu_late_ch, cfg.emu_mid_ch, 5, rng);
    net.add_conv("conv3", 1, cfg.emu_late_ch, 5, rng);
    net
}

pub fn init_discriminator(cfg: &NetConfig, rng: &mut impl Rng) -> Network {
    let mut net = Network::new("D");
    net.add_conv("conv1", cfg.disc_ch1, 1, 5, rng);
    net.add_conv("conv2", cfg.disc_ch2, cfg.disc_ch1, 5, rng);
    let flat = cfg.disc_ch2 * (IMG_SIDE / 4) * (IMG_SIDE / 4);
    net.add_dense("fc1", flat, cfg.disc_dense, rng);
    net.add_dense("fc2", cfg.disc_dense, 1, rng);
    net
}

pub fn init_siamese(cfg: &NetConfig, rng: &mut impl Rng) -> Network {
    let mut net = Network::new("S");
    net.add_conv("conv1", cfg.disc_ch1, 1, 5, rng);
    net.add_conv("conv2", cfg.disc_ch2, cfg.disc_ch1, 5, rng);
    let flat = cfg.disc_ch2 * (IMG_SIDE / 4) * (IMG_SIDE / 4);
    net.add_dense("fc1", flat, ENCODING_LEN, rng);
    net.add_dense("head", 1, 1, rng);
    net
}

// ---------------------------------------------------------------------------
// Graph assembly (sizes read from the network's tensors)
// ---------------------------------------------------------------------------

fn dense_dims(net: &Network, prefix: &str) -> Result<(usize, usize)> {
    let w = net
        .get(&format!("{prefix}.w"))
        .ok_or_else(|| Error::Param(format!("{}.{prefix}.w missing", net.name())))?;
    Ok((w.shape()[0], w.shape()[1]))
}

fn conv_dims(net: &Network, prefix: &str) -> Result<(usize, usize, usize)> {
    let k = net
        .get(&format!("{prefix}.k"))
        .ok_or_else(|| Error::Param(format!("{}.{prefix}.k missing", net.name())))?;
    Ok((k.shape()[0], k.shape()[1], k.shape()[2]))
}

fn dense(b: &mut GraphBuilder, net: &Network, prefix: &str, x: NodeId) -> Result<NodeId> {
    let (d_in, d_out) = dense_dims(net, prefix)?;
    let w = b.param(net.name(), &format!("{prefix}.w"), &[d_in, d_out]);
    let bias = b.param(net.name(), &format!("{prefix}.b"), &[d_out]);
    let h = b.matmul(x, w)?;
    b.bias_add(h, bias)
}

fn conv(b: &mut GraphBuilder, net: &Network, prefix: &str, x: NodeId, stride: usize) -> Result<NodeId> {
    let (oc, ic, k) = conv_dims(net, prefix)?;
    let kn = b.param(net.name(), &format!("{prefix}.k"), &[oc, ic, k, k]);
    let bias = b.param(net.name(), &format!("{prefix}.b"), &[oc]);
    let h = b.conv2d(x, kn, stride, k / 2)?;
    b.bias_add(h, bias)
}

/// z [batch, noise_dim] -> normalized parameters [batch, n_params] in (-1,1).
pub fn build_generator(b: &mut GraphBuilder, net: &Network, z: NodeId) -> Result<NodeId> {
    let h = dense(b, net, "fc1", z)?;
    let h = b.leaky_relu(h, LEAKY_SLOPE);
    let h = dense(b, net, "fc2", h)?;
    let h = b.leaky_relu(h, LEAKY_SLOPE);
    let h = dense(b, net, "fc3", h)?;
    Ok(b.tanh(h))
}

/// p [batch, n_params] -> image [batch, 1, 28, 28] in (-1,1).
pub fn build_emulator(b: &mut GraphBuilder, net: &Network, p: NodeId) -> Result<NodeId> {
    let batch = b.shape(p)[0];
    let (_, seed_len) = dense_dims(net, "fc")?;
    let (_, base_ch, _) = conv_dims(net, "conv1")?;
    let side = IMG_SIDE / 4;
    if seed_len != base_ch * side * side {
        return Err(Error::Param(format!(
            "emulator seed layer {seed_len} does not match {base_ch} channels of {side}x{side}"
        )));
    }
    let h = dense(b, net, "fc", p)?;
    let h = b.leaky_relu(h, LEAKY_SLOPE);
    let h = b.reshape(h, &[batch, base_ch, side, side])?;
    let h = b.upsample2x(h)?;
    let h = conv(b, net, "conv1", h, 1)?;
    let h = b.leaky_relu(h, LEAKY_SLOPE);
    let h = b.upsample2x(h)?;
    let h = conv(b, net, "conv2", h, 1)?;
    let h = b.leaky_relu(h, LEAKY_SLOPE);
    let h = conv(b, net, "conv3", h, 1)?;
    Ok(b.tanh(h))
}

/// Shared conv trunk of D and S: image -> dense feature vector.
fn encoder_trunk(b: &mut GraphBuilder, net: &Network, img: NodeId) -> Result<NodeId> {
    let batch = b.shape(img)[0];
    let h = conv(b, net, "conv1", img, 2)?;
    let h = b.leaky_relu(h, LEAKY_SLOPE);
    let h = conv(b, net, "conv2", h, 2)?;
    let h = b.leaky_relu(h, LEAKY_SLOPE);
    let flat: usize = b.shape(h)[1..].iter().product();
    let h = b.reshape(h, &[batch, flat])?;
    let h = dense(b, net, "fc1", h)?;
    Ok(b.leaky_relu(h, LEAKY_SLOPE))
}

/// img [batch, 1, 28, 28] -> score [batch, 1] in (0,1).
pub fn build_discriminator(b: &mut GraphBuilder, net: &Network, img: NodeId) -> Result<NodeId> {
    let h = encoder_trunk(b, net, img)?;
    let h = dense(b, net, "fc2", h)?;
    Ok(b.sigmoid(h))
}

/// Two images -> similarity score [batch, 1] in (0,1). Both branches emit
/// param nodes naming the same tensors, so the weights are genuinely shared.
///
/// The head scores the Euclidean distance between the two encodings. The
/// norm's unit-vector gradient keeps the encoder learnable even while the
/// encodings are still tiny; a dense head over raw squared differences
/// stalls at small-init scales because its gradient shrinks quadratically.
pub fn build_siamese(b: &mut GraphBuilder, net: &Network, a: NodeId, bb: NodeId) -> Result<NodeId> {
    let enc_a = encoder_trunk(b, net, a)?;
    let enc_b = encoder_trunk(b, net, bb)?;
    let d = b.sub(enc_a, enc_b)?;
    let d = b.row_norm(d)?;
    let h = dense(b, net, "head", d)?;
    Ok(b.sigmoid(h))
}

// ---------------------------------------------------------------------------
// Single-network inference sessions
// ---------------------------------------------------------------------------

enum Arch {
    Generator,
    Emulator,
    Discriminator,
    Siamese,
}

/// Reusable forward-only runner for one network at a fixed batch size.
pub struct InferSession {
    exec: Executor<f32>,
    out: NodeId,
    batch: usize,
    arch: Arch,
}

impl InferSession {
    pub fn generator(net: &Network, batch: usize) -> Result<Self> {
        let (noise_dim, _) = dense_dims(net, "fc1")?;
        let mut b = GraphBuilder::new();
        let z = b.input("z", &[batch, noise_dim])?;
        let out = build_generator(&mut b, net, z)?;
        let exec = Executor::new(b.build(), &[net], &[Binding::frozen(net.name())])?;
        Ok(InferSession { exec, out, batch, arch: Arch::Generator })
    }

    pub fn emulator(net: &Network, batch: usize) -> Result<Self> {
        let (n_params, _) = dense_dims(net, "fc")?;
        let mut b = GraphBuilder::new();
        let p = b.input("p", &[batch, n_params])?;
        let out = build_emulator(&mut b, net, p)?;
        let exec = Executor::new(b.build(), &[net], &[Binding::frozen(net.name())])?;
        Ok(InferSession { exec, out, batch, arch: Arch::Emulator })
    }

    pub fn discriminator(net: &Network, batch: usize) -> Result<Self> {
        let mut b = GraphBuilder::new();
        let img = b.input("x", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
        let out = build_discriminator(&mut b, net, img)?;
        let exec = Executor::new(b.build(), &[net], &[Binding::frozen(net.name())])?;
        Ok(InferSession { exec, out, batch, arch: Arch::Discriminator })
    }

    pub fn siamese(net: &Network, batch: usize) -> Result<Self> {
        let mut b = GraphBuilder::new();
        let a = b.input("a", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
        let bb = b.input("b", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
        let out = build_siamese(&mut b, net, a, bb)?;
        let exec = Executor::new(b.build(), &[net], &[Binding::frozen(net.name())])?;
        Ok(InferSession { exec, out, batch, arch: Arch::Siamese })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Runs the network on one batch. `data` is the flat input (for the
    /// Siamese, both images concatenated: a then b). Returns the flat output.
    pub fn forward(&mut self, net: &Network, data: &[f32]) -> Result<&[f32]> {
        self.exec.load_params(&[net])?;
        match self.arch {
            Arch::Siamese => {
                let half = data.len() / 2;
                self.exec.forward(&[("a", &data[..half]), ("b", &data[half..])])?;
            }
            Arch::Generator => self.exec.forward(&[("z", data)])?,
            Arch::Emulator => self.exec.forward(&[("p", data)])?,
            Arch::Discriminator => self.exec.forward(&[("x", data)])?,
        }
        Ok(self.exec.value(self.out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn fresh_networks_have_expected_layer_shapes() {
        let cfg = NetConfig::default();
        let mut r = rng();
        let g = init_generator(&cfg, 4, &mut r);
        assert_eq!(g.get("fc3.w").unwrap().shape(), &[128, 4]);
        let e = init_emulator(&cfg, 4, &mut r);
        assert_eq!(e.get("fc.w").unwrap().shape(), &[4, 7 * 7 * 64]);
        assert_eq!(e.get("conv1.k").unwrap().shape(), &[32, 64, 5, 5]);
        assert_eq!(e.get("conv3.k").unwrap().shape(), &[1, 16, 5, 5]);
        let d = init_discriminator(&cfg, &mut r);
        assert_eq!(d.get("fc1.w").unwrap().shape(), &[32 * 7 * 7, 128]);
        let s = init_siamese(&cfg, &mut r);
        assert_eq!(s.get("fc1.w").unwrap().shape(), &[32 * 7 * 7, ENCODING_LEN]);
        // The head scores the scalar encoding distance.
        assert_eq!(s.get("head.w").unwrap().shape(), &[1, 1]);
        // Biases start at zero.
        assert!(d.get("fc1.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_and_emulator_outputs_stay_in_open_unit_range() {
        let cfg = NetConfig::default();
        let mut r = rng();
        let g = init_generator(&cfg, 4, &mut r);
        let mut s = InferSession::generator(&g, 3).unwrap();
        let z: Vec<f32> = (0..3 * 64).map(|i| ((i * 37 % 19) as f32 - 9.0) / 3.0).collect();
        let out = s.forward(&g, &z).unwrap().to_vec();
        assert_eq!(out.len(), 3 * 4);
        assert!(out.iter().all(|&v| v > -1.0 && v < 1.0));

        let e = init_emulator(&cfg, 4, &mut r);
        let mut se = InferSession::emulator(&e, 2).unwrap();
        let img = se.forward(&e, &[0.1, -0.4, 0.9, 0.0, -1.0, 1.0, 0.5, -0.5]).unwrap();
        assert_eq!(img.len(), 2 * IMG_PIXELS);
        assert!(img.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn siamese_is_symmetric_and_constant_on_identical_pairs() {
        let cfg = NetConfig::default();
        let mut r = rng();
        let s = init_siamese(&cfg, &mut r);
        let mut sess = InferSession::siamese(&s, 1).unwrap();
        let a: Vec<f32> = (0..IMG_PIXELS).map(|i| ((i % 13) as f32 - 6.0) / 7.0).collect();
        let b: Vec<f32> = (0..IMG_PIXELS).map(|i| ((i % 7) as f32 - 3.0) / 4.0).collect();

        let mut ab = a.clone();
        ab.extend_from_slice(&b);
        let s_ab = sess.forward(&s, &ab).unwrap()[0];
        let mut ba = b.clone();
        ba.extend_from_slice(&a);
        let s_ba = sess.forward(&s, &ba).unwrap()[0];
        assert_eq!(s_ab.to_bits(), s_ba.to_bits(), "squared-difference head is symmetric");

        let mut aa = a.clone();
        aa.extend_from_slice(&a);
        let s_aa = sess.forward(&s, &aa).unwrap()[0];
        let mut bb2 = b.clone();
        bb2.extend_from_slice(&b);
        let s_bb = sess.forward(&s, &bb2).unwrap()[0];
        assert_eq!(s_aa.to_bits(), s_bb.to_bits(), "identical pairs hit the zero vector");
        assert!(s_ab > 0.0 && s_ab < 1.0);
    }

    #[test]
    fn siamese_branches_share_storage() {
        let cfg = NetConfig::default();
        let mut r = rng();
        let mut s = init_siamese(&cfg, &mut r);
        let a: Vec<f32> = (0..IMG_PIXELS).map(|i| (i as f32 / IMG_PIXELS as f32) - 0.5).collect();
        let b = vec![0.25f32; IMG_PIXELS];
        let mut ab = a.clone();
        ab.extend_from_slice(&b);
        let mut ba = b.clone();
        ba.extend_from_slice(&a);

        let mut sess = InferSession::siamese(&s, 1).unwrap();
        let before_ab = sess.forward(&s, &ab).unwrap()[0];
        let before_ba = sess.forward(&s, &ba).unwrap()[0];
        // One mutation moves both branches because there is only one tensor.
        let idx = s.index_of("conv1.k").unwrap();
        s.param_mut(idx).data_mut()[0] += 0.5;
        let after_ab = sess.forward(&s, &ab).unwrap()[0];
        let after_ba = sess.forward(&s, &ba).unwrap()[0];
        assert_ne!(before_ab.to_bits(), after_ab.to_bits());
        assert_eq!(after_ab.to_bits(), after_ba.to_bits());
        assert_eq!(before_ab.to_bits(), before_ba.to_bits());
    }

    #[test]
    fn forward_is_pure() {
        let cfg = NetConfig::default();
        let mut r = rng();
        let d = init_discriminator(&cfg, &mut r);
        let mut sess = InferSession::discriminator(&d, 2).unwrap();
        let x: Vec<f32> = (0..2 * IMG_PIXELS).map(|i| ((i % 29) as f32 - 14.0) / 15.0).collect();
        let y1 = sess.forward(&d, &x).unwrap().to_vec();
        let y2 = sess.forward(&d, &x).unwrap().to_vec();
        assert_eq!(y1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   y2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(y1.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
