use crate::autodiff::{AutodiffError, Result};
use crate::Scalar;

/// Dense row-major tensor of rank 0, 1 or 2.
///
/// `grad` is an accumulation buffer the training loop fills from
/// [`crate::autodiff::Gradients`] and the optimizer consumes; it is `None`
/// until the first accumulation after construction or
/// [`Tensor::zero_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    pub requires_grad: bool,
    pub grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.len() > 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "from_vec",
                detail: format!("rank {} > 2", shape.len()),
            });
        }
        if n != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(x: F) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// The single value of a rank-0 tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.data[0]
    }

    /// Rows of a rank-2 tensor (a rank-1 tensor is one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => 1,
        }
    }

    /// Columns of a rank-2 tensor (length of a rank-1 tensor).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Adds `g` into the grad buffer, allocating zeros first if needed.
    pub fn accumulate_grad(&mut self, g: &[F]) {
        let buf = self
            .grad
            .get_or_insert_with(|| vec![F::zero(); self.data.len()]);
        debug_assert_eq!(buf.len(), g.len());
        for (b, &x) in buf.iter_mut().zip(g) {
            *b += x;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![F::zero(); self.data.len()]);
    }
}
