use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major f32 tensor. Activations are NCHW, conv weights OIHW.
///
/// `grad`, when present, always has the same length as `data` and accumulates
/// across backward passes until [`Tensor::zero_grad`] clears it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} elements for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![1.0; n], requires_grad: false, grad: None }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Adds `g` into the gradient buffer, allocating a zeroed one on first use.
    pub fn accumulate_grad(&mut self, g: &[f32]) {
        debug_assert_eq!(g.len(), self.data.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst += *src;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Copies the leading-prefix block `dims` out of a tensor of shape `shape`.
///
/// `dims` must have the same rank as `shape` and `dims[i] <= shape[i]`. Used
/// for slicing weights down to the channels active at a reduced width.
pub fn slice_prefix(data: &[f32], shape: &[usize], dims: &[usize]) -> Vec<f32> {
    debug_assert_eq!(shape.len(), dims.len());
    let out_len: usize = dims.iter().product();
    let mut out = Vec::with_capacity(out_len);
    let mut idx = vec![0usize; dims.len()];
    if out_len == 0 {
        return out;
    }
    loop {
        let mut flat = 0;
        for (i, &ix) in idx.iter().enumerate() {
            flat = flat * shape[i] + ix;
        }
        // innermost dim is contiguous; copy a whole run at once
        let run = dims[dims.len() - 1];
        out.extend_from_slice(&data[flat..flat + run]);
        // advance all but the innermost index
        let mut d = dims.len() as isize - 2;
        loop {
            if d < 0 {
                return out;
            }
            idx[d as usize] += 1;
            if idx[d as usize] < dims[d as usize] {
                break;
            }
            idx[d as usize] = 0;
            d -= 1;
        }
    }
}

/// Adds the prefix-block gradient `src` (shape `dims`) into the full-size
/// buffer `dst` (shape `shape`). The complement of the block is untouched.
pub fn scatter_add_prefix(dst: &mut [f32], shape: &[usize], src: &[f32], dims: &[usize]) {
    debug_assert_eq!(shape.len(), dims.len());
    debug_assert_eq!(src.len(), dims.iter().product::<usize>());
    if src.is_empty() {
        return;
    }
    let run = dims[dims.len() - 1];
    let mut idx = vec![0usize; dims.len()];
    let mut pos = 0;
    loop {
        let mut flat = 0;
        for (i, &ix) in idx.iter().enumerate() {
            flat = flat * shape[i] + ix;
        }
        for j in 0..run {
            dst[flat + j] += src[pos + j];
        }
        pos += run;
        let mut d = idx.len() as isize - 2;
        loop {
            if d < 0 {
                return;
            }
            idx[d as usize] += 1;
            if idx[d as usize] < dims[d as usize] {
                break;
            }
            idx[d as usize] = 0;
            d -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn grad_accumulates_across_calls() {
        let mut t = Tensor::zeros(&[3]).with_grad();
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        assert_eq!(t.grad.as_deref(), Some(&[2.0, 4.0, 6.0][..]));
        t.zero_grad();
        assert_eq!(t.grad.as_deref(), Some(&[0.0, 0.0, 0.0][..]));
    }

    #[test]
    fn slice_prefix_takes_leading_block() {
        // shape [2,3]: [[0,1,2],[3,4,5]] -> dims [2,2] -> [0,1,3,4]
        let data: Vec<f32> = (0..6).map(|v| v as f32).collect();
        assert_eq!(slice_prefix(&data, &[2, 3], &[2, 2]), vec![0.0, 1.0, 3.0, 4.0]);
        assert_eq!(slice_prefix(&data, &[2, 3], &[1, 3]), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn scatter_is_inverse_of_slice_on_the_block() {
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let shape = [2, 3, 4];
        let dims = [2, 2, 3];
        let block = slice_prefix(&data, &shape, &dims);
        let mut full = vec![0.0; 24];
        scatter_add_prefix(&mut full, &shape, &block, &dims);
        let again = slice_prefix(&full, &shape, &dims);
        assert_eq!(block, again);
        // complement untouched
        let total: f32 = full.iter().sum();
        assert_eq!(total, block.iter().sum::<f32>());
    }
}
