//! Named parameter storage shared across forward passes.

use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::rng::PortableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<R> {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<R>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<R: Real> {
    params: Vec<Param<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<R> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<R> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<R>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn add(&mut self, name: impl Into<String>, shape: [usize; 2], data: Vec<R>) -> ParamId {
        assert_eq!(data.len(), shape[0] * shape[1]);
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix with scaled uniform fan-in init: U(-a, a), a = 1/sqrt(fan_in).
    pub fn add_weight(
        &mut self,
        name: impl Into<String>,
        shape: [usize; 2],
        rng: &mut PortableRng,
    ) -> ParamId {
        let a = 1.0 / (shape[0] as f64).sqrt();
        let data = (0..shape[0] * shape[1])
            .map(|_| R::from_f64((rng.uniform_f64() * 2.0 - 1.0) * a))
            .collect();
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: [usize; 2]) -> ParamId {
        self.add(name, shape, vec![R::zero(); shape[0] * shape[1]])
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: [usize; 2]) -> ParamId {
        self.add(name, shape, vec![R::one(); shape[0] * shape[1]])
    }
}
