//! Finite-difference checks of parameter and input gradients for whole
//! blocks, shared by the test-suite and the command line.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mhdlsa::{init_mhdlsa, mhdlsa_block};
use crate::network::{build_model, hdtb_forward, model_forward, rhdtg_forward, ModelConfig};
use crate::params::{Bindings, ParamStore};
use crate::sparsegsa::{init_sparsegsa, sparsegsa_block};
use crate::tensor::{Graph, Shape, Tensor, Var};

/// Name used for coordinates of the network input.
pub const INPUT: &str = "<input>";

/// Central-difference step used by [`run_gradcheck`].
pub const GRADCHECK_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordCheck {
    /// `|a - n| / max(|a|, |n|, 1e-8)`.
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-8)
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub label: String,
    pub checks: Vec<CoordCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(CoordCheck::rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }

    pub fn param_checks(&self) -> usize {
        self.checks.iter().filter(|c| c.name != INPUT).count()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} {:>3} coords ({} parameter)  max rel error {:.3e}",
            self.label,
            self.checks.len(),
            self.param_checks(),
            self.max_rel_error()
        )?;
        if let Some(w) = self.worst() {
            write!(f, "  worst {}[{}] {:.6e} vs {:.6e}", w.name, w.index, w.analytic, w.numeric)?;
        }
        Ok(())
    }
}

type Forward<'a> = dyn Fn(&mut Graph<f64>, &Bindings, Var) -> Result<Var> + 'a;

/// Compare reverse-mode gradients of the scalar `f(params, input)` with
/// central differences at the given `(name, flat index)` coordinates, where
/// `name` is a parameter or [`INPUT`].
pub fn check_coords(
    params: &ParamStore<f64>,
    input: &Tensor<f64>,
    f: &Forward<'_>,
    coords: &[(String, usize)],
    eps: f64,
) -> Result<Vec<CoordCheck>> {
    let eval = |p: &ParamStore<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let xv = g.input(x.clone());
        let y = f(&mut g, &b, xv)?;
        scalar(&g, y)
    };
    let mut g = Graph::new();
    let b = params.bind(&mut g, true);
    let xv = g.param(input.clone());
    let y = f(&mut g, &b, xv)?;
    scalar(&g, y)?;
    g.backward(y)?;
    let grads = b.grads(&g);
    let input_grad = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    coords
        .iter()
        .map(|(name, i)| {
            let analytic = if name == INPUT {
                input_grad.data()[*i]
            } else {
                grads
                    .get(name)
                    .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))?
                    .data()[*i]
            };
            let shifted = |delta: f64| -> Result<f64> {
                if name == INPUT {
                    let mut x = input.clone();
                    x.data_mut()[*i] += delta;
                    eval(params, &x)
                } else {
                    let mut p = params.clone();
                    p.get_mut(name)?.data_mut()[*i] += delta;
                    eval(&p, input)
                }
            };
            let numeric = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
            Ok(CoordCheck {
                name: name.clone(),
                index: *i,
                analytic,
                numeric,
            })
        })
        .collect()
}

fn scalar(g: &Graph<f64>, y: Var) -> Result<f64> {
    let v = g.value(y);
    if v.len() != 1 {
        return Err(Error::Usage(format!("gradient check needs a scalar, got {}", v.shape())));
    }
    Ok(v.data()[0])
}

/// `count` coordinates: one per name in `required`, the rest drawn by first
/// choosing a parameter tensor uniformly, then an entry.
pub fn pick_coords<R: Rng + ?Sized>(
    params: &ParamStore<f64>,
    count: usize,
    required: &[&str],
    rng: &mut R,
) -> Vec<(String, usize)> {
    let names: Vec<&String> = params.names().collect();
    let mut out: Vec<(String, usize)> = required
        .iter()
        .filter_map(|r| names.iter().find(|n| n.ends_with(r)))
        .map(|n| {
            let len = params.get(n).map(|t| t.len()).unwrap_or(1);
            ((*n).clone(), rng.random_range(0..len))
        })
        .collect();
    while out.len() < count && !names.is_empty() {
        let n = names[rng.random_range(0..names.len())];
        let len = params.get(n).map(|t| t.len()).unwrap_or(0);
        if len > 0 {
            out.push((n.clone(), rng.random_range(0..len)));
        }
    }
    out
}

/// Perturb every parameter so zero-initialized branches carry signal.
fn jitter(params: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, amp: f64) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-amp..amp);
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Scalar loss `sum(w * y)` with fixed random weights.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), g.shape(y));
    let w = g.input(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Modules understood by [`run_gradcheck`].
pub const MODULES: [&str; 5] = ["mhdlsa", "sparsegsa", "hdtb", "rhdtg", "network"];

fn block_config() -> ModelConfig {
    ModelConfig {
        channels: 12,
        heads: 2,
        num_groups: 2,
        blocks_per_group: 2,
        ffn_ratio: 2.0,
        ..ModelConfig::tiny(2)
    }
}

/// Check one module (`"all"` for every entry of [`MODULES`]) at
/// `params_per_block` random parameter coordinates plus a few input
/// coordinates, in 64-bit precision.
pub fn run_gradcheck(module: &str, seed: u64, params_per_block: usize) -> Result<Vec<GradcheckReport>> {
    if module == "all" {
        let mut out = Vec::new();
        for m in MODULES {
            out.extend(run_gradcheck(m, seed, params_per_block)?);
        }
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = block_config();
    let c = cfg.channels;
    let feature = Shape::new(1, c, 6, 5);
    let (mut params, input, f, required): (ParamStore<f64>, Tensor<f64>, Box<Forward<'_>>, Vec<&str>) = match module {
        "mhdlsa" => {
            let mut p = ParamStore::new();
            let mc = cfg.mhdlsa();
            init_mhdlsa(&mut p, "b", &mc, &mut rng)?;
            let f = move |g: &mut Graph<f64>, b: &Bindings, x: Var| {
                let y = mhdlsa_block(g, &b.scope("b"), &mc, x)?;
                project(g, y, seed)
            };
            (p, uniform(&mut rng, feature), Box::new(f), vec!["gen.expand.weight"])
        }
        "sparsegsa" => {
            let mut p = ParamStore::new();
            let sc = cfg.sparsegsa();
            init_sparsegsa(&mut p, "b", &sc, &mut rng)?;
            let f = move |g: &mut Graph<f64>, b: &Bindings, x: Var| {
                let y = sparsegsa_block(g, &b.scope("b"), &sc, x)?;
                project(g, y, seed)
            };
            (p, uniform(&mut rng, feature), Box::new(f), vec!["log_alpha"])
        }
        "hdtb" | "rhdtg" => {
            let model = build_model::<f64>(cfg.clone(), seed)?;
            let prefix = if module == "hdtb" { "groups.0.blocks.0" } else { "groups.0" };
            let mut p = ParamStore::new();
            for (k, t) in model.params.iter().filter(|(k, _)| k.starts_with(&format!("{prefix}."))) {
                p.insert(k.clone(), t.clone());
            }
            let hdtb = module == "hdtb";
            let cfg2 = cfg.clone();
            let f = move |g: &mut Graph<f64>, b: &Bindings, x: Var| {
                let y = if hdtb {
                    hdtb_forward(g, &b.scope(prefix), &cfg2, x)?
                } else {
                    rhdtg_forward(g, &b.scope(prefix), &cfg2, x)?
                };
                project(g, y, seed)
            };
            (p, uniform(&mut rng, feature), Box::new(f), vec!["log_alpha", "gen.expand.weight"])
        }
        "network" => {
            let tiny = ModelConfig::tiny(2);
            let model = build_model::<f64>(tiny.clone(), seed)?;
            let f = move |g: &mut Graph<f64>, b: &Bindings, x: Var| {
                let y = model_forward(g, b, &tiny, x)?;
                project(g, y, seed)
            };
            let x = Tensor::from_fn(Shape::new(1, 3, 5, 4), |_, _, _, _| rng.random_range(0.0..1.0));
            (model.params, x, Box::new(f), vec!["head.weight", "tail.weight", "log_alpha"])
        }
        _ => {
            return Err(Error::Usage(format!(
                "unknown gradcheck module {module:?} (all, {})",
                MODULES.join(", ")
            )))
        }
    };
    jitter(&mut params, &mut rng, 0.1);
    let mut coords = pick_coords(&params, params_per_block, &required, &mut rng);
    for _ in 0..3 {
        coords.push((INPUT.to_string(), rng.random_range(0..input.len())));
    }
    let checks = check_coords(&params, &input, &*f, &coords, GRADCHECK_EPS)?;
    Ok(vec![GradcheckReport {
        label: module.to_string(),
        checks,
    }])
}
