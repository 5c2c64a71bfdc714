//! Graph execution with preallocated buffers.
//!
//! An executor owns one value buffer and (where required) one gradient buffer
//! per node, sized once at construction, so the training loop allocates
//! nothing per step. Parameters are copied in from the bound networks with
//! [`Executor::load_params`]; gradient verification instead writes parameter
//! buffers directly, which is why loading and running are separate calls.

use std::collections::BTreeMap;

use super::kernels::{self, ConvSpec, Scalar};
use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::nets::Network;

/// Which networks a graph may reference, and whether their parameters receive
/// gradients in this session.
#[derive(Debug, Clone)]
pub struct Binding {
    pub net: String,
    pub trainable: bool,
}

impl Binding {
    pub fn trainable(net: &str) -> Self {
        Binding { net: net.to_string(), trainable: true }
    }
    pub fn frozen(net: &str) -> Self {
        Binding { net: net.to_string(), trainable: false }
    }
}

pub struct Executor<T: Scalar> {
    graph: Graph,
    values: Vec<Vec<T>>,
    grads: Vec<Vec<T>>,
    /// Gradient buffers exist only where this is set.
    needs_grad: Vec<bool>,
    /// Param node -> (binding slot, parameter index within the network).
    param_slot: BTreeMap<usize, (usize, usize)>,
    input_nodes: BTreeMap<String, NodeId>,
    bindings: Vec<Binding>,
    forward_done: bool,
}

fn pair_mut<T>(v: &mut [Vec<T>], i: usize, j: usize) -> (&mut Vec<T>, &mut Vec<T>) {
    debug_assert_ne!(i, j);
    if i < j {
        let (a, b) = v.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = v.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}

impl<T: Scalar> Executor<T> {
    /// `nets` must contain every network the graph references; parameter
    /// shapes are checked here so later steps can assume they match.
    pub fn new(graph: Graph, nets: &[&Network], bindings: &[Binding]) -> Result<Self> {
        let mut param_slot = BTreeMap::new();
        let mut input_nodes = BTreeMap::new();
        let mut needs_grad = vec![false; graph.nodes().len()];

        for (idx, node) in graph.nodes().iter().enumerate() {
            match &node.op {
                Op::Input { name } => {
                    input_nodes.insert(name.clone(), NodeId(idx));
                }
                Op::Param { net, name } => {
                    let slot = bindings
                        .iter()
                        .position(|b| &b.net == net)
                        .ok_or_else(|| Error::Param(format!("graph references unbound network `{net}`")))?;
                    let bound = nets
                        .iter()
                        .find(|n| n.name() == net)
                        .ok_or_else(|| Error::Param(format!("network `{net}` not supplied")))?;
                    let pidx = bound
                        .index_of(name)
                        .ok_or_else(|| Error::Param(format!("network `{net}` has no parameter `{name}`")))?;
                    let have = bound.param(pidx).shape();
                    if have != node.shape.as_slice() {
                        return Err(Error::Param(format!(
                            "parameter `{net}.{name}` is {have:?} but the graph expects {:?}",
                            node.shape
                        )));
                    }
                    param_slot.insert(idx, (slot, pidx));
                    needs_grad[idx] = bindings[slot].trainable;
                }
                op => {
                    needs_grad[idx] = op.inputs().iter().any(|i| needs_grad[i.0]);
                }
            }
        }

        let values: Vec<Vec<T>> = graph
            .nodes()
            .iter()
            .map(|n| vec![T::ZERO; n.shape.iter().product()])
            .collect();
        let grads: Vec<Vec<T>> = graph
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if needs_grad[i] {
                    vec![T::ZERO; n.shape.iter().product()]
                } else {
                    Vec::new()
                }
            })
            .collect();

        Ok(Executor {
            graph,
            values,
            grads,
            needs_grad,
            param_slot,
            input_nodes,
            bindings: bindings.to_vec(),
            forward_done: false,
        })
    }

    fn conv_spec(graph: &Graph, idx: usize) -> ConvSpec {
        let node = &graph.nodes()[idx];
        let Op::Conv2d { x, kernel, stride, pad } = &node.op else {
            unreachable!("conv_spec on non-conv node")
        };
        let xs = graph.shape(*x);
        let ks = graph.shape(*kernel);
        ConvSpec {
            batch: xs[0],
            in_ch: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_ch: ks[0],
            ksize: ks[2],
            stride: *stride,
            pad: *pad,
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Copies current parameter values out of the networks. Call before each
    /// forward pass in training; shapes were validated at construction.
    pub fn load_params(&mut self, nets: &[&Network]) -> Result<()> {
        for (&idx, &(slot, pidx)) in &self.param_slot {
            let net_name = &self.bindings[slot].net;
            let net = nets
                .iter()
                .find(|n| n.name() == net_name)
                .ok_or_else(|| Error::Param(format!("network `{net_name}` not supplied")))?;
            let src = net.param(pidx).data();
            for (dst, s) in self.values[idx].iter_mut().zip(src.iter()) {
                *dst = T::from_f32(*s);
            }
        }
        Ok(())
    }

    /// Runs the graph on the given named inputs. Every data input must be fed
    /// exactly once; parameter buffers keep whatever was last loaded.
    pub fn forward(&mut self, inputs: &[(&str, &[T])]) -> Result<()> {
        let mut fed = vec![false; self.graph.nodes().len()];
        for (name, data) in inputs {
            let id = *self
                .input_nodes
                .get(*name)
                .ok_or_else(|| Error::UnknownInput(name.to_string()))?;
            let want = self.values[id.0].len();
            if data.len() != want {
                return Err(Error::InputSize {
                    name: name.to_string(),
                    got: data.len(),
                    expected: want,
                });
            }
            self.values[id.0].copy_from_slice(data);
            fed[id.0] = true;
        }
        for (name, id) in &self.input_nodes {
            if !fed[id.0] {
                return Err(Error::UnknownInput(format!("{name} (not fed)")));
            }
        }

        for idx in 0..self.graph.nodes().len() {
            self.eval_node(idx);
        }
        self.forward_done = true;
        Ok(())
    }

    fn eval_node(&mut self, idx: usize) {
        let op = self.graph.nodes()[idx].op.clone();
        match op {
            Op::Input { .. } | Op::Param { .. } => {}
            Op::MatMul { x, w } => {
                let [m, n] = self.graph.shape(NodeId(idx))[..] else { unreachable!() };
                let k = self.graph.shape(x)[1];
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::matmul_fwd(&xv[x.0], &xv[w.0], &mut rest[0], m, k, n);
            }
            Op::BiasAdd { x, b } => {
                let (outer, ch, inner) = bias_dims(self.graph.shape(x));
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::bias_add_fwd(&xv[x.0], &xv[b.0], &mut rest[0], outer, ch, inner);
            }
            Op::Conv2d { x, kernel, .. } => {
                let spec = Self::conv_spec(&self.graph, idx);
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::conv2d_fwd(&xv[x.0], &xv[kernel.0], &mut rest[0], &spec);
            }
            Op::Upsample2x { x } => {
                let s = self.graph.shape(x);
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::upsample2x_fwd(&xv[x.0], &mut rest[0], planes, h, w);
            }
            Op::Reshape { x } => {
                let (xv, rest) = self.values.split_at_mut(idx);
                rest[0].copy_from_slice(&xv[x.0]);
            }
            Op::Tanh { x } => {
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::tanh_fwd(&xv[x.0], &mut rest[0]);
            }
            Op::Sigmoid { x } => {
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::sigmoid_fwd(&xv[x.0], &mut rest[0]);
            }
            Op::LeakyRelu { x, slope } => {
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::leaky_relu_fwd(&xv[x.0], &mut rest[0], T::from_f32(slope));
            }
            Op::Sub { a, b } => {
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::sub_fwd(&xv[a.0], &xv[b.0], &mut rest[0]);
            }
            Op::Square { x } => {
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::square_fwd(&xv[x.0], &mut rest[0]);
            }
            Op::RowNorm { x } => {
                let cols = self.graph.shape(x)[1];
                let (xv, rest) = self.values.split_at_mut(idx);
                kernels::row_norm_fwd(&xv[x.0], &mut rest[0], cols);
            }
            Op::ReduceSum { x } => {
                let (xv, rest) = self.values.split_at_mut(idx);
                rest[0][0] = kernels::reduce_sum_fwd(&xv[x.0]);
            }
            Op::Bce { pred, target } => {
                let (xv, rest) = self.values.split_at_mut(idx);
                rest[0][0] = kernels::bce_fwd(&xv[pred.0], &xv[target.0]);
            }
        }
    }

    /// Reverse pass from a scalar loss. Gradient buffers are zeroed first, so
    /// each backward call reflects that loss alone.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.forward_done {
            return Err(Error::BackwardBeforeForward);
        }
        let loss_shape = self.graph.shape(loss);
        if loss_shape != [1] {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        if !self.needs_grad[loss.0] {
            return Err(Error::Param("loss does not depend on any trainable parameter".into()));
        }

        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::ZERO);
        }
        self.grads[loss.0][0] = T::ONE;

        // Only ancestors of the loss can receive gradient.
        let mut ancestor = vec![false; self.graph.nodes().len()];
        ancestor[loss.0] = true;
        for idx in (0..=loss.0).rev() {
            if ancestor[idx] {
                for inp in self.graph.nodes()[idx].op.inputs() {
                    ancestor[inp.0] = true;
                }
            }
        }

        for idx in (0..=loss.0).rev() {
            if ancestor[idx] && self.needs_grad[idx] {
                self.backprop_node(idx);
            }
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize) {
        let op = self.graph.nodes()[idx].op.clone();
        let needs = |id: NodeId, s: &Self| s.needs_grad[id.0];
        match op {
            Op::Input { .. } | Op::Param { .. } => {}
            Op::MatMul { x, w } => {
                let m = self.graph.shape(x)[0];
                let k = self.graph.shape(x)[1];
                let n = self.graph.shape(w)[1];
                let (nx, nw) = (needs(x, self), needs(w, self));
                let gy = std::mem::take(&mut self.grads[idx]);
                {
                    let (gx, gw) = pair_mut(&mut self.grads, x.0, w.0);
                    kernels::matmul_bwd(
                        &self.values[x.0],
                        &self.values[w.0],
                        &gy,
                        nx.then_some(gx.as_mut_slice()),
                        nw.then_some(gw.as_mut_slice()),
                        m,
                        k,
                        n,
                    );
                }
                self.grads[idx] = gy;
            }
            Op::BiasAdd { x, b } => {
                let (outer, ch, inner) = bias_dims(self.graph.shape(x));
                let (nx, nb) = (needs(x, self), needs(b, self));
                let gy = std::mem::take(&mut self.grads[idx]);
                {
                    let (gx, gb) = pair_mut(&mut self.grads, x.0, b.0);
                    kernels::bias_add_bwd(
                        &gy,
                        nx.then_some(gx.as_mut_slice()),
                        nb.then_some(gb.as_mut_slice()),
                        outer,
                        ch,
                        inner,
                    );
                }
                self.grads[idx] = gy;
            }
            Op::Conv2d { x, kernel, .. } => {
                let spec = Self::conv_spec(&self.graph, idx);
                let (nx, nk) = (needs(x, self), needs(kernel, self));
                let gy = std::mem::take(&mut self.grads[idx]);
                {
                    let (gx, gk) = pair_mut(&mut self.grads, x.0, kernel.0);
                    kernels::conv2d_bwd(
                        &self.values[x.0],
                        &self.values[kernel.0],
                        &gy,
                        nx.then_some(gx.as_mut_slice()),
                        nk.then_some(gk.as_mut_slice()),
                        &spec,
                    );
                }
                self.grads[idx] = gy;
            }
            Op::Upsample2x { x } => {
                let s = self.graph.shape(x).to_vec();
                let (gx, gy) = pair_mut(&mut self.grads, x.0, idx);
                kernels::upsample2x_bwd(gy, gx, s[0] * s[1], s[2], s[3]);
            }
            Op::Reshape { x } => {
                let (gx, gy) = pair_mut(&mut self.grads, x.0, idx);
                for (o, g) in gx.iter_mut().zip(gy.iter()) {
                    *o += *g;
                }
            }
            Op::Tanh { x } => {
                let y = std::mem::take(&mut self.values[idx]);
                let (gx, gy) = pair_mut(&mut self.grads, x.0, idx);
                kernels::tanh_bwd(&y, gy, gx);
                self.values[idx] = y;
            }
            Op::Sigmoid { x } => {
                let y = std::mem::take(&mut self.values[idx]);
                let (gx, gy) = pair_mut(&mut self.grads, x.0, idx);
                kernels::sigmoid_bwd(&y, gy, gx);
                self.values[idx] = y;
            }
            Op::LeakyRelu { x, slope } => {
                let (gx, gy) = pair_mut(&mut self.grads, x.0, idx);
                kernels::leaky_relu_bwd(&self.values[x.0], gy, gx, T::from_f32(slope));
            }
            Op::Sub { a, b } => {
                let gy = std::mem::take(&mut self.grads[idx]);
                if needs(a, self) {
                    for (o, g) in self.grads[a.0].iter_mut().zip(gy.iter()) {
                        *o += *g;
                    }
                }
                if needs(b, self) {
                    for (o, g) in self.grads[b.0].iter_mut().zip(gy.iter()) {
                        *o -= *g;
                    }
                }
                self.grads[idx] = gy;
            }
            Op::Square { x } => {
                let (gx, gy) = pair_mut(&mut self.grads, x.0, idx);
                kernels::square_bwd(&self.values[x.0], gy, gx);
            }
            Op::RowNorm { x } => {
                let cols = self.graph.shape(x)[1];
                let (gx, gy) = pair_mut(&mut self.grads, x.0, idx);
                kernels::row_norm_bwd(&self.values[x.0], &self.values[idx], gy, gx, cols);
            }
            Op::ReduceSum { x } => {
                let (gx, gy) = pair_mut(&mut self.grads, x.0, idx);
                let g = gy[0];
                for o in gx.iter_mut() {
                    *o += g;
                }
            }
            Op::Bce { pred, target } => {
                // Labels are data inputs; only the prediction gets gradient.
                let (gp, gy) = pair_mut(&mut self.grads, pred.0, idx);
                kernels::bce_bwd(&self.values[pred.0], &self.values[target.0], gy[0], gp);
            }
        }
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.values[id.0]
    }

    /// Direct write into a node buffer; used to perturb parameters at full
    /// working precision during gradient verification.
    pub fn set_value(&mut self, id: NodeId, data: &[T]) {
        self.values[id.0].copy_from_slice(data);
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.needs_grad[id.0].then_some(self.grads[id.0].as_slice())
    }

    /// Nodes carrying the given parameter; several when weights are shared.
    pub fn param_nodes(&self, net: &str, name: &str) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .graph
            .nodes()
            .iter()
            .enumerate()
            .filter(|(_, n)| {
                matches!(&n.op, Op::Param { net: pn, name: pm } if pn == net && pm == name)
            })
            .map(|(i, _)| NodeId(i))
            .collect();
        out.sort_by_key(|n| n.0);
        out
    }

    /// Adds this pass's parameter gradients into the networks' gradient
    /// slots. Only trainable bindings contribute; shared parameters receive
    /// the sum over all their graph occurrences.
    pub fn apply_param_grads(&self, nets: &mut [&mut Network]) -> Result<()> {
        for (&idx, &(slot, pidx)) in &self.param_slot {
            if !self.bindings[slot].trainable {
                continue;
            }
            let net_name = &self.bindings[slot].net;
            let net = nets
                .iter_mut()
                .find(|n| n.name() == net_name)
                .ok_or_else(|| Error::Param(format!("network `{net_name}` not supplied")))?;
            let g = net.param_mut(pidx).grad_mut();
            for (dst, s) in g.iter_mut().zip(self.grads[idx].iter()) {
                *dst += s.to_f64() as f32;
            }
        }
        Ok(())
    }
}

fn bias_dims(data_shape: &[usize]) -> (usize, usize, usize) {
    match data_shape.len() {
        2 => (data_shape[0], data_shape[1], 1),
        4 => (data_shape[0], data_shape[1], data_shape[2] * data_shape[3]),
        _ => unreachable!("bias rank checked at build"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::tensor::Tensor;

    fn toy_net() -> Network {
        let mut n = Network::new("toy");
        n.add("w", Tensor::from_vec(&[2, 1], vec![0.5, -1.0]).unwrap());
        n.add("b", Tensor::from_vec(&[1], vec![0.25]).unwrap());
        n
    }

    #[test]
    fn linear_forward_and_backward_by_hand() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[1, 2]).unwrap();
        let w = b.param("toy", "w", &[2, 1]);
        let bias = b.param("toy", "b", &[1]);
        let h = b.matmul(x, w).unwrap();
        let h = b.bias_add(h, bias).unwrap();
        let y = b.square(h);
        let loss = b.reduce_sum(y);

        let net = toy_net();
        let mut exec: Executor<f64> =
            Executor::new(b.build(), &[&net], &[Binding::trainable("toy")]).unwrap();
        exec.load_params(&[&net]).unwrap();
        exec.forward(&[("x", &[2.0, 1.0])]).unwrap();
        // h = 2*0.5 - 1*1.0 + 0.25 = 0.25; loss = 0.0625
        assert!((exec.value(loss)[0] - 0.0625).abs() < 1e-12);

        exec.backward(loss).unwrap();
        // dL/dh = 2h = 0.5; dL/dw = x^T * 0.5 = (1.0, 0.5); dL/db = 0.5
        let wg = exec.grad(exec.param_nodes("toy", "w")[0]).unwrap();
        assert!((wg[0] - 1.0).abs() < 1e-12 && (wg[1] - 0.5).abs() < 1e-12);
        let bg = exec.grad(exec.param_nodes("toy", "b")[0]).unwrap();
        assert!((bg[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn backward_requires_forward_and_scalar_loss() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[1, 2]).unwrap();
        let w = b.param("toy", "w", &[2, 1]);
        let h = b.matmul(x, w).unwrap();
        let loss = b.reduce_sum(h);
        let net = toy_net();
        let mut exec: Executor<f32> =
            Executor::new(b.build(), &[&net], &[Binding::trainable("toy")]).unwrap();
        assert!(matches!(exec.backward(loss), Err(Error::BackwardBeforeForward)));
        exec.load_params(&[&net]).unwrap();
        exec.forward(&[("x", &[1.0, 1.0])]).unwrap();
        assert!(matches!(exec.backward(h), Err(Error::NonScalarLoss(_))));
        assert!(exec.backward(loss).is_ok());
    }

    #[test]
    fn frozen_bindings_get_no_parameter_gradients() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[1, 2]).unwrap();
        let w = b.param("toy", "w", &[2, 1]);
        let h = b.matmul(x, w).unwrap();
        let y = b.square(h);
        let loss = b.reduce_sum(y);
        let net = toy_net();
        let mut exec: Executor<f32> =
            Executor::new(b.build(), &[&net], &[Binding::frozen("toy")]).unwrap();
        exec.load_params(&[&net]).unwrap();
        exec.forward(&[("x", &[1.0, 1.0])]).unwrap();
        // Nothing trainable below the loss.
        assert!(exec.backward(loss).is_err());
        assert!(exec.grad(exec.param_nodes("toy", "w")[0]).is_none());
    }

    #[test]
    fn missing_and_unknown_inputs_are_rejected() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[1, 2]).unwrap();
        let _ = b.square(x);
        let mut exec: Executor<f32> = Executor::new(b.build(), &[], &[]).unwrap();
        assert!(matches!(
            exec.forward(&[("y", &[0.0, 0.0])]),
            Err(Error::UnknownInput(_))
        ));
        assert!(matches!(exec.forward(&[]), Err(Error::UnknownInput(_))));
        assert!(matches!(
            exec.forward(&[("x", &[0.0])]),
            Err(Error::InputSize { .. })
        ));
        assert!(exec.forward(&[("x", &[0.0, 0.0])]).is_ok());
    }
}
