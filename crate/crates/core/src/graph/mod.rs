//! Static compute graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is built once per session with the batch size baked into every
//! shape, then run many times by an [`exec::Executor`]. Node order is
//! topological by construction because an operation can only reference nodes
//! that already exist.

pub mod exec;
pub mod gradcheck;
pub mod kernels;

use crate::error::{Error, Result};
use kernels::ConvSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Externally fed data, bound by name at each forward call.
    Input { name: String },
    /// Network parameter, resolved against the bound networks. The same
    /// parameter may appear in several nodes; gradients accumulate.
    Param { net: String, name: String },
    MatMul { x: NodeId, w: NodeId },
    /// Adds a vector over the channel axis: rank-2 data uses the last axis,
    /// rank-4 data the second.
    BiasAdd { x: NodeId, b: NodeId },
    Conv2d { x: NodeId, kernel: NodeId, stride: usize, pad: usize },
    Upsample2x { x: NodeId },
    Reshape { x: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    LeakyRelu { x: NodeId, slope: f32 },
    Sub { a: NodeId, b: NodeId },
    Square { x: NodeId },
    /// Euclidean length of each row of a [rows, cols] matrix, epsilon-guarded
    /// so the gradient stays finite on all-zero rows.
    RowNorm { x: NodeId },
    ReduceSum { x: NodeId },
    /// Mean binary cross-entropy against a target that must be a data input.
    Bce { pred: NodeId, target: NodeId },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param { .. } => "param",
            Op::MatMul { .. } => "matmul",
            Op::BiasAdd { .. } => "bias_add",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x { .. } => "upsample2x",
            Op::Reshape { .. } => "reshape",
            Op::Tanh { .. } => "tanh",
            Op::Sigmoid { .. } => "sigmoid",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sub { .. } => "sub",
            Op::Square { .. } => "square",
            Op::RowNorm { .. } => "row_norm",
            Op::ReduceSum { .. } => "reduce_sum",
            Op::Bce { .. } => "bce",
        }
    }

    /// Direct operands, in a fixed order.
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } | Op::Param { .. } => vec![],
            Op::MatMul { x, w } => vec![*x, *w],
            Op::BiasAdd { x, b } => vec![*x, *b],
            Op::Conv2d { x, kernel, .. } => vec![*x, *kernel],
            Op::Upsample2x { x }
            | Op::Reshape { x }
            | Op::Tanh { x }
            | Op::Sigmoid { x }
            | Op::LeakyRelu { x, .. }
            | Op::Square { x }
            | Op::RowNorm { x }
            | Op::ReduceSum { x } => vec![*x],
            Op::Sub { a, b } => vec![*a, *b],
            Op::Bce { pred, target } => vec![*pred, *target],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(self) -> Graph {
        Graph { nodes: self.nodes }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, detail: String) -> Error {
        Error::ShapeMismatch { node: self.nodes.len(), op, detail }
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if self.nodes.iter().any(|n| matches!(&n.op, Op::Input { name: m } if m == name)) {
            return Err(self.mismatch("input", format!("duplicate input name {name:?}")));
        }
        Ok(self.push(Op::Input { name: name.to_string() }, shape.to_vec()))
    }

    pub fn param(&mut self, net: &str, name: &str, shape: &[usize]) -> NodeId {
        self.push(Op::Param { net: net.to_string(), name: name.to_string() }, shape.to_vec())
    }

    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(self.mismatch("matmul", format!("{xs:?} x {ws:?}")));
        }
        Ok(self.push(Op::MatMul { x, w }, vec![xs[0], ws[1]]))
    }

    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, bs) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        let ch = match xs.len() {
            2 => xs[1],
            4 => xs[1],
            _ => return Err(self.mismatch("bias_add", format!("data rank {} unsupported", xs.len()))),
        };
        if bs != vec![ch] {
            return Err(self.mismatch("bias_add", format!("bias {bs:?} for data {xs:?}")));
        }
        Ok(self.push(Op::BiasAdd { x, b }, xs))
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 4 || ks.len() != 4 || ks[1] != xs[1] || ks[2] != ks[3] {
            return Err(self.mismatch("conv2d", format!("image {xs:?}, kernel {ks:?}")));
        }
        if xs[2] + 2 * pad < ks[2] || xs[3] + 2 * pad < ks[3] || stride == 0 {
            return Err(self.mismatch(
                "conv2d",
                format!("kernel {}x{} stride {stride} pad {pad} on {}x{}", ks[2], ks[3], xs[2], xs[3]),
            ));
        }
        let spec = ConvSpec {
            batch: xs[0],
            in_ch: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_ch: ks[0],
            ksize: ks[2],
            stride,
            pad,
        };
        let shape = vec![spec.batch, spec.out_ch, spec.out_h(), spec.out_w()];
        Ok(self.push(Op::Conv2d { x, kernel, stride, pad }, shape))
    }

    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(self.mismatch("upsample2x", format!("rank {} data", xs.len())));
        }
        Ok(self.push(Op::Upsample2x { x }, vec![xs[0], xs[1], 2 * xs[2], 2 * xs[3]]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let have: usize = self.shape(x).iter().product();
        let want: usize = shape.iter().product();
        if have != want {
            return Err(self.mismatch("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        Ok(self.push(Op::Reshape { x }, shape.to_vec()))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Tanh { x }, s)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Sigmoid { x }, s)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::LeakyRelu { x, slope }, s)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(
                "sub",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let s = self.shape(a).to_vec();
        Ok(self.push(Op::Sub { a, b }, s))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Square { x }, s)
    }

    pub fn row_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(self.mismatch("row_norm", format!("rank {} data", xs.len())));
        }
        Ok(self.push(Op::RowNorm { x }, vec![xs[0], 1]))
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::ReduceSum { x }, vec![1])
    }

    pub fn bce(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        if self.shape(pred) != self.shape(target) {
            return Err(self.mismatch(
                "bce",
                format!("pred {:?} vs target {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        // Targets are labels, not part of the differentiated graph.
        if !matches!(self.nodes[target.0].op, Op::Input { .. }) {
            return Err(self.mismatch("bce", "target must be a data input".to_string()));
        }
        Ok(self.push(Op::Bce { pred, target }, vec![1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_inference_tracks_conv_geometry() {
        let mut b = GraphBuilder::new();
        let x = b.input("img", &[2, 1, 28, 28]).unwrap();
        let k = b.param("d", "c1.k", &[16, 1, 5, 5]);
        let c = b.conv2d(x, k, 2, 2).unwrap();
        assert_eq!(b.shape(c), &[2, 16, 14, 14]);
        let k2 = b.param("d", "c2.k", &[32, 16, 5, 5]);
        let c2 = b.conv2d(c, k2, 2, 2).unwrap();
        assert_eq!(b.shape(c2), &[2, 32, 7, 7]);
        let u = b.upsample2x(c2).unwrap();
        assert_eq!(b.shape(u), &[2, 32, 14, 14]);
    }

    #[test]
    fn builder_rejects_bad_wiring() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[4, 3]).unwrap();
        let w = b.param("n", "w", &[4, 2]);
        assert!(b.matmul(x, w).is_err());
        assert!(b.input("x", &[4, 3]).is_err(), "duplicate input name");
        let y = b.param("n", "v", &[4, 3]);
        let d = b.sub(x, y).unwrap();
        // bce target must be fed data, not computed.
        assert!(b.bce(x, d).is_err());
    }
}
