//! Uniform access to the learnable tensors of a model. The optimizer,
//! the checkpoint writer and the gradient tests all walk parameters as a
//! flat list of named matrices, in a canonical order that every
//! implementation of [`ParamBlocks`] must keep stable.

use crate::numerics::Matrix;

pub trait ParamBlocks: Sized {
    /// All learnable matrices in canonical order.
    fn blocks(&self) -> Vec<&Matrix>;

    /// Mutable view of the same matrices, same order.
    fn blocks_mut(&mut self) -> Vec<&mut Matrix>;

    /// Block names, parallel to `blocks()`. Used for checkpoints and
    /// diagnostics, never in the math path.
    fn block_names(&self) -> Vec<String>;

    /// A shape-congruent copy with every entry zeroed. The conventional
    /// gradient container.
    fn zeros_like(&self) -> Self;

    fn shape_congruent(&self, other: &Self) -> bool {
        let a = self.blocks();
        let b = other.blocks();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }

    /// `self += s * other`, blockwise.
    fn add_scaled(&mut self, other: &Self, s: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            debug_assert_eq!(dst.shape(), src.shape());
            for (d, &v) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += s * v;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for block in self.blocks_mut() {
            for v in block.data_mut() {
                *v *= s;
            }
        }
    }

    /// Euclidean norm over every element of every block.
    fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.is_finite())
    }

    /// Total number of scalar parameters.
    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

pub(crate) fn prefixed(prefix: &str, names: Vec<String>) -> Vec<String> {
    names.into_iter().map(|n| format!("{prefix}.{n}")).collect()
}
