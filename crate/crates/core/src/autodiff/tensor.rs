use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{numel, Window};
use crate::array::Array;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    /// `scale * x + shift`; only the scale matters for the backward pass.
    Affine(f64),
    Pow(f64),
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Elu(f64),
    Sqrt,
    MatMul { ta: bool, tb: bool },
    Reshape,
    Permute(Vec<usize>),
    SumAll,
    SumAxis(usize),
    /// One-hot mask of the selected elements, same shape as the input.
    MaxAxis(usize, Rc<Vec<f64>>),
    BroadcastTo,
    SumTo,
    Slice { axis: usize, start: usize },
    Embed { axis: usize, start: usize },
    Concat { axis: usize },
    Im2Col(Window),
    Col2Im(Window),
    GatherRows(Rc<Vec<usize>>),
    ScatterRows(Rc<Vec<usize>>),
}

/// Value snapshot kept on the tape for the backward pass.
#[derive(Clone)]
pub(crate) struct Saved {
    pub shape: Rc<[usize]>,
    pub data: Rc<Vec<f64>>,
    pub id: Option<usize>,
}

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Saved>,
    pub out: Saved,
}

/// Append-only record of operations. Node ids are insertion indices, so
/// insertion order is a topological order.
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) nodes: Rc<RefCell<Vec<Node>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register `value` as a differentiable leaf on this tape.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let saved = value.saved_detached();
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            out: saved.clone(),
        });
        Tensor {
            shape: saved.shape,
            data: saved.data,
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    pub fn leaf_array(&self, value: &Array) -> Tensor {
        self.leaf(&Tensor::from_array(value))
    }

    pub(crate) fn push(&self, mut node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        node.out.id = Some(id);
        nodes.push(node);
        id
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: usize,
}

/// Dense row-major `f64` tensor. Attached tensors remember the tape node
/// that produced them; detached tensors are plain constants.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Rc<[usize]>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &&*self.shape)
            .field("attached", &self.node.is_some())
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::dim("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self::raw(shape, data))
    }

    pub(crate) fn raw(shape: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(shape), data.len());
        Self {
            shape: shape.into(),
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(&[], vec![v])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        let n = v.len();
        Self::raw(&[n], v)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(shape, vec![0.0; numel(shape)])
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::raw(shape, vec![v; numel(shape)])
    }

    pub fn from_array(a: &Array) -> Self {
        Self::raw(a.shape(), a.data().to_vec())
    }

    pub fn to_array(&self) -> Array {
        Array::new(self.shape.to_vec(), self.data.to_vec()).expect("tensor invariant")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    /// Same values, no tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub(crate) fn id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    pub(crate) fn saved(&self) -> Saved {
        Saved {
            shape: self.shape.clone(),
            data: self.data.clone(),
            id: self.id(),
        }
    }

    fn saved_detached(&self) -> Saved {
        Saved {
            shape: self.shape.clone(),
            data: self.data.clone(),
            id: None,
        }
    }

    /// Wrap a freshly computed value, recording `op` on the tape shared by
    /// the attached inputs (if any).
    pub(crate) fn record(op: Op, inputs: &[&Tensor], shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::record_rc(op, inputs, shape, Rc::new(data))
    }

    /// As [`Tensor::record`], sharing existing storage.
    pub(crate) fn record_rc(op: Op, inputs: &[&Tensor], shape: &[usize], data: Rc<Vec<f64>>) -> Result<Tensor> {
        let mut tape: Option<&Tape> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match tape {
                    None => tape = Some(&n.tape),
                    Some(existing) if existing.same(&n.tape) => {}
                    Some(_) => {
                        return Err(Error::Usage(
                            "operands belong to different tapes".into(),
                        ))
                    }
                }
            }
        }
        let out = Tensor {
            shape: shape.into(),
            data,
            node: None,
        };
        let Some(tape) = tape else {
            return Ok(out);
        };
        let id = tape.push(Node {
            op,
            inputs: inputs.iter().map(|t| t.saved()).collect(),
            out: out.saved_detached(),
        });
        Ok(Tensor {
            node: Some(NodeRef {
                tape: tape.clone(),
                id,
            }),
            ..out
        })
    }

    pub(crate) fn from_saved(s: &Saved, tape: Option<&Tape>) -> Tensor {
        Tensor {
            shape: s.shape.clone(),
            data: s.data.clone(),
            node: match (tape, s.id) {
                (Some(t), Some(id)) => Some(NodeRef {
                    tape: t.clone(),
                    id,
                }),
                _ => None,
            },
        }
    }
}
