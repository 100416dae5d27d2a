//! Network blocks, parameter naming and initialization.

pub mod blocks;
pub mod config;
pub mod params;

use std::cell::RefCell;
use std::collections::BTreeMap;

pub use blocks::{
    chb_forward, chrg_forward, cofb_forward, cofb_parts, gcp_attention, CofbParts, echosr_forward, ffn_forward, gcp_forward, infer,
    la_forward, mrfe_forward,
};
pub use config::{Branch, FfnKind, ModelConfig};
pub use params::{count_params, model_specs, ModelParams, ParamKind, ParamSpec, ParamStore};

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Element, Graph, Tensor4, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers; running statistics are collected.
    Train,
    /// Running statistics in normalization layers.
    Eval,
}

/// Batch statistics observed by one normalization layer during a training pass.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub prefix: String,
    pub mean: Vec<f32>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f32>,
    /// Elements per channel that produced the statistics.
    pub count: usize,
}

/// Parameters placed on a graph, addressed by path.
pub struct Bound<'s, 'g, T: Element = f32> {
    graph: &'g Graph<T>,
    vars: BTreeMap<String, Var<'g, T>>,
    buffers: &'s BTreeMap<String, Tensor4<f32>>,
    mode: Mode,
    stats: RefCell<Vec<StatUpdate>>,
}

impl<'s, 'g, T: Element> Bound<'s, 'g, T> {
    /// With `trainable` false every parameter enters the graph as a constant.
    pub fn new(graph: &'g Graph<T>, store: &'s ParamStore, mode: Mode, trainable: bool) -> Self {
        let vars = store
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), graph.leaf(t.cast(), trainable)))
            .collect();
        Bound {
            graph,
            vars,
            buffers: &store.buffers,
            mode,
            stats: RefCell::new(Vec::new()),
        }
    }

    /// Binds caller-provided variables instead of copying them from a store.
    pub fn from_vars(
        graph: &'g Graph<T>,
        vars: BTreeMap<String, Var<'g, T>>,
        buffers: &'s BTreeMap<String, Tensor4<f32>>,
        mode: Mode,
    ) -> Self {
        Bound {
            graph,
            vars,
            buffers,
            mode,
            stats: RefCell::new(Vec::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn vars(&self) -> &BTreeMap<String, Var<'g, T>> {
        &self.vars
    }

    pub fn take_stat_updates(&self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stats.borrow_mut())
    }

    pub fn root(&self) -> Scope<'_, 's, 'g, T> {
        Scope {
            bound: self,
            prefix: String::new(),
        }
    }
}

/// A path prefix into a [`Bound`].
#[derive(Clone)]
pub struct Scope<'b, 's, 'g, T: Element = f32> {
    bound: &'b Bound<'s, 'g, T>,
    prefix: String,
}

impl<'b, 's, 'g, T: Element> Scope<'b, 's, 'g, T> {
    pub fn child(&self, name: &str) -> Self {
        Scope {
            bound: self.bound,
            prefix: params::join(&self.prefix, name),
        }
    }

    pub fn path(&self, name: &str) -> String {
        params::join(&self.prefix, name)
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.bound.graph
    }

    pub fn param(&self, name: &str) -> Result<Var<'g, T>> {
        let path = self.path(name);
        self.bound
            .vars
            .get(&path)
            .cloned()
            .ok_or(Error::MissingParam(path))
    }

    fn optional(&self, name: &str) -> Option<Var<'g, T>> {
        self.bound.vars.get(&self.path(name)).cloned()
    }

    /// Convolution using `<name>.weight` and, if present, `<name>.bias`.
    pub fn conv(&self, name: &str, x: &Var<'g, T>, spec: &ConvSpec) -> Result<Var<'g, T>> {
        let s = self.child(name);
        let w = s.param("weight")?;
        let b = s.optional("bias");
        x.conv2d(&w, b.as_ref(), spec)
    }

    pub fn batch_norm(&self, name: &str, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let s = self.child(name);
        let gamma = s.param("weight")?;
        let beta = s.param("bias")?;
        match self.bound.mode {
            Mode::Eval => {
                let mean = self.bound.buffers.get(&s.path("running_mean"));
                let var = self.bound.buffers.get(&s.path("running_var"));
                let (Some(mean), Some(var)) = (mean, var) else {
                    return Err(Error::UninitializedStats(s.prefix.clone()));
                };
                let (mean, var) = (mean.cast::<T>(), var.cast::<T>());
                let (y, _, _) = x.batch_norm(&gamma, &beta, Some((mean.data(), var.data())))?;
                Ok(y)
            }
            Mode::Train => {
                let (y, mean, var) = x.batch_norm(&gamma, &beta, None)?;
                let sh = x.shape();
                let lossy = |v: Vec<T>| v.into_iter().map(|x| x.to_f64_lossy() as f32).collect();
                self.bound.stats.borrow_mut().push(StatUpdate {
                    prefix: s.prefix.clone(),
                    mean: lossy(mean),
                    var: lossy(var),
                    count: sh.n * sh.h * sh.w,
                });
                Ok(y)
            }
        }
    }
}

/// Folds batch statistics into the running buffers with momentum
/// [`BN_MOMENTUM`](crate::tensor::kernels::BN_MOMENTUM). The running variance
/// tracks the unbiased batch variance.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) -> Result<()> {
    let m = crate::tensor::kernels::BN_MOMENTUM as f32;
    for u in updates {
        let correction = if u.count > 1 {
            u.count as f32 / (u.count - 1) as f32
        } else {
            1.0
        };
        for (suffix, fresh, factor) in [
            ("running_mean", &u.mean, 1.0f32),
            ("running_var", &u.var, correction),
        ] {
            let key = params::join(&u.prefix, suffix);
            let buf = store
                .buffers
                .get_mut(&key)
                .ok_or_else(|| Error::UninitializedStats(u.prefix.clone()))?;
            for (r, &v) in buf.data_mut().iter_mut().zip(fresh) {
                *r = (1.0 - m) * *r + m * v * factor;
            }
        }
    }
    Ok(())
}
