use rand::Rng;

use crate::autodiff::{Graph, Matrix, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// `fan_in × fan_out` matrix, uniform in ±√(6 / (fan_in + fan_out)).
    pub fn glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = glorot_bound(fan_in, fan_out);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let m = Matrix::new(fan_in, fan_out, data).expect("sized by construction");
        self.add(name, m)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Overwrites a named parameter, checking the shape.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named `{name}`")))?;
        let current = &self.values[id.0];
        if current.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("`{name}` is {:?}, got {:?}", current.shape(), value.shape()),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Registers every parameter as a leaf of `g`, in store order.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.values.iter().map(|v| g.leaf(v.clone())).collect())
    }

    /// Same as [`ParamStore::bind`] but with replacement values.
    pub fn bind_values(g: &mut Graph, values: &[Matrix]) -> Bound {
        Bound(values.iter().map(|v| g.leaf(v.clone())).collect())
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Graph leaves for a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps leaves created elsewhere, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Gradients for every parameter after `g.backward`.
    pub fn grads(&self, g: &Graph) -> Vec<Matrix> {
        self.0
            .iter()
            .map(|&v| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(g.shape(v).0, g.shape(v).1))
            })
            .collect()
    }
}

/// Affine map `x · W + b` with `W` stored `in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = bias.then(|| store.zeros(format!("{name}.bias"), 1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, b.var(self.weight))?;
        match self.bias {
            Some(bias) => g.add_row(y, b.var(bias)),
            None => Ok(y),
        }
    }
}
