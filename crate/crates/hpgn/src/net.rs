//! Small helpers shared by the network modules.

use crate::error::Result;
use crate::tensor::conv::ConvSpec;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Bound, Scalar};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

pub(crate) const fn pointwise() -> ConvSpec {
    ConvSpec { stride: 1, padding: 0, groups: 1 }
}

pub(crate) const fn same3x3() -> ConvSpec {
    ConvSpec { stride: 1, padding: 1, groups: 1 }
}

/// Run the convolution registered under `name` (weight `<name>.w`, optional
/// bias `<name>.b`).
pub(crate) fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    name: &str,
    x: Var,
    spec: ConvSpec,
) -> Result<Var> {
    let w = bound.var(&format!("{name}.w"))?;
    let b = bound.try_var(&format!("{name}.b"));
    tape.conv2d(x, w, b, spec)
}
