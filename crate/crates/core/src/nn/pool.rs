use crate::autograd::{ReduceOp, Var};
use crate::error::{dim_err, Result};
use crate::float::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

impl PoolMode {
    fn reduce_op(self) -> ReduceOp {
        match self {
            PoolMode::Avg => ReduceOp::Mean,
            PoolMode::Max => ReduceOp::Max,
        }
    }
}

fn expect_nchw(shape: &[usize], what: &str) -> Result<()> {
    if shape.len() != 4 {
        return dim_err(format!("{what} expects N×C×H×W, got {shape:?}"));
    }
    if shape.iter().any(|&d| d == 0) {
        return dim_err(format!("{what} on empty extent {shape:?}"));
    }
    Ok(())
}

impl<'t, T: Float> Var<'t, T> {
    /// Pools each channel over its whole spatial extent: N×C×H×W → N×C.
    pub fn global_pool(self, mode: PoolMode) -> Result<Var<'t, T>> {
        expect_nchw(&self.shape(), "global_pool")?;
        self.reduce(mode.reduce_op(), &[2, 3], false)
    }

    /// Pools across channels at each pixel: N×C×H×W → N×1×H×W.
    pub fn channel_pool(self, mode: PoolMode) -> Result<Var<'t, T>> {
        expect_nchw(&self.shape(), "channel_pool")?;
        self.reduce(mode.reduce_op(), &[1], true)
    }
}
