//! Named-parameter wrappers around the graph primitives shared by every block.

use rand::Rng;

use crate::error::Result;
use crate::params::{Init, ParamStore, Scope};
use crate::tensor::{ConvSpec, Graph, PadMode, Scalar, Shape, Var};

pub const LN_EPS: f64 = 1e-5;

/// Std of the truncated normal used for pointwise and attention projections.
pub const PROJ_STD: f64 = 0.02;

/// Convolution with `{name}.weight` and, when bound, `{name}.bias`.
pub fn conv<T: Scalar>(g: &mut Graph<T>, s: &Scope, name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
    let p = s.at(name);
    let w = p.var("weight")?;
    g.conv2d(x, w, p.opt("bias"), spec)
}

pub fn depthwise<T: Scalar>(g: &mut Graph<T>, s: &Scope, name: &str, x: Var, mode: PadMode) -> Result<Var> {
    let p = s.at(name);
    let w = p.var("weight")?;
    g.depthwise_conv2d(x, w, p.opt("bias"), mode)
}

pub fn norm<T: Scalar>(g: &mut Graph<T>, s: &Scope, name: &str, x: Var) -> Result<Var> {
    let p = s.at(name);
    g.layer_norm(x, p.var("gain")?, p.var("offset")?, LN_EPS)
}

#[allow(clippy::too_many_arguments)]
pub fn init_conv<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    cout: usize,
    cin_per_group: usize,
    k: usize,
    init: Init,
    bias: bool,
    rng: &mut R,
) {
    store.init(format!("{name}.weight"), Shape::new(cout, cin_per_group, k, k), init, rng);
    if bias {
        store.init(format!("{name}.bias"), Shape::vector(cout), Init::Zeros, rng);
    }
}

pub fn init_norm<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, rng: &mut R) {
    store.init(format!("{name}.gain"), Shape::vector(c), Init::Ones, rng);
    store.init(format!("{name}.offset"), Shape::vector(c), Init::Zeros, rng);
}
