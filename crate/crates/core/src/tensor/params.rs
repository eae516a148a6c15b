//! Named parameter storage and per-tape binding.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Insertion-ordered, uniquely named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    }

    /// Replaces an existing tensor, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))?;
        if self.tensors[i].shape() != t.shape() {
            return Err(Error::dim("ParamStore::set", self.tensors[i].shape(), t.shape()));
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape` as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self.tensors.iter().map(|t| tape.param(t.clone())).collect();
        Bound {
            index: self.index.clone(),
            vars,
        }
    }
}

/// Parameters of one [`ParamStore`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    index: BTreeMap<String, usize>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    }

    /// Gradients in store order; parameters never touched get zeros.
    pub fn collect(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| grads.get(v).cloned().expect("bound parameters are tracked"))
            .collect()
    }
}

/// Declares a pair of structs for a parameter block: one holding tensors
/// (for init, checkpoints and tests) and one holding tape handles.
macro_rules! param_block {
    ($(#[$meta:meta])* $weights:ident => $vars:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $weights {
            $(pub $field: $crate::tensor::Tensor,)+
        }

        /// Tape handles for the matching weight block.
        #[derive(Clone, Copy, Debug)]
        pub struct $vars {
            $(pub $field: $crate::tensor::Var,)+
        }

        impl $weights {
            /// Records every tensor as a tracked leaf.
            pub fn record(&self, tape: &mut $crate::tensor::Tape) -> $vars {
                $vars { $($field: tape.param(self.$field.clone()),)+ }
            }

            pub fn register(
                &self,
                store: &mut $crate::tensor::ParamStore,
                prefix: &str,
            ) -> $crate::error::Result<()> {
                $(store.insert(alloc::format!("{prefix}.{}", stringify!($field)), self.$field.clone())?;)+
                Ok(())
            }

            pub fn from_store(
                store: &$crate::tensor::ParamStore,
                prefix: &str,
            ) -> $crate::error::Result<Self> {
                Ok($weights {
                    $($field: store.require(&alloc::format!("{prefix}.{}", stringify!($field)))?.clone(),)+
                })
            }
        }

        impl $vars {
            pub fn bind(bound: &$crate::tensor::Bound, prefix: &str) -> $crate::error::Result<Self> {
                Ok($vars {
                    $($field: bound.var(&alloc::format!("{prefix}.{}", stringify!($field)))?,)+
                })
            }
        }
    };
}

pub(crate) use param_block;
