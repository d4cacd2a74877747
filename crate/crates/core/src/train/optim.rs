//! Adam and the step learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `lr0 * factor^k` where `k` counts milestones `<= iter`.
pub fn lr_multistep(iter: usize, lr0: f64, milestones: &[usize], factor: f64) -> f64 {
    let k = milestones.iter().filter(|&&m| m <= iter).count();
    lr0 * factor.powi(k as i32)
}

/// First and second moment estimates, keyed like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, p)| (k.clone(), Tensor::zeros(p.shape())))
                .collect()
        };
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected update. Parameters without a gradient entry are
    /// left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
        let (ob1, ob2) = (T::lit(1.0 - BETA1), T::lit(1.0 - BETA2));
        let step = T::lit(lr / c1);
        let inv_c2 = T::lit(1.0 / c2);
        let eps = T::lit(ADAM_EPS);
        for (name, g) in grads {
            let missing = || Error::Usage(format!("no optimizer state for {name:?}"));
            let p = params.get_mut(name)?;
            let m = self.m.get_mut(name).ok_or_else(missing)?;
            let v = self.v.get_mut(name).ok_or_else(missing)?;
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "{name}: gradient {} vs parameter {}",
                    g.shape(),
                    p.shape()
                )));
            }
            let it = p.data_mut().iter_mut().zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, (m, v)), &g) in it.zip(g.data()) {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
