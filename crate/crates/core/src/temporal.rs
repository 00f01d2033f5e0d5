//! Per-edge temporal embeddings.
//!
//! For an edge `src → dst` with time steps `t_src`, `t_dst` and
//! `Δt = |t_src - t_dst|`, the embedding concatenates
//!
//! 1. an affine projection of `Δt` to `d_1 = ⌊d_t/4⌋` dimensions,
//! 2. a projection of `[PE(t_src), PE(t_dst)]` (sinusoidal encodings, in
//!    that order) to `d_2 = ⌊d_t/2⌋` dimensions,
//! 3. a projection of `(Δt, ln(Δt+1), √(Δt+1))` to `d_3 = ⌊d_t/4⌋` dimensions,
//!
//! then applies a fusion linear map to `d_t`, layer norm, ReLU and dropout.
//! Time steps enter the encodings unnormalized.

use rand::{Rng, RngCore};

use crate::autodiff::{Graph, Matrix, Mode, Var};
use crate::error::{Error, Result};
use crate::model::params::{Bound, Linear, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalConfig {
    pub d_t: usize,
    pub d_pos: usize,
    pub dropout: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            d_t: 32,
            d_pos: 16,
            dropout: 0.1,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_t < 4 {
            return Err(Error::invalid(format!("d_t must be >= 4, got {}", self.d_t)));
        }
        if self.d_pos == 0 || self.d_pos % 2 != 0 {
            return Err(Error::invalid(format!("d_pos must be even and positive, got {}", self.d_pos)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn d1(&self) -> usize {
        self.d_t / 4
    }

    pub fn d2(&self) -> usize {
        self.d_t / 2
    }

    pub fn d3(&self) -> usize {
        self.d_t / 4
    }
}

/// `(Δt, ln(Δt + 1), √(Δt + 1))`.
pub fn multiscale_features(delta: f64) -> Result<[f64; 3]> {
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!("time difference must be >= 0, got {delta}")));
    }
    Ok([delta, delta.ln_1p(), (delta + 1.0).sqrt()])
}

/// Sinusoidal encoding: entry `2k` is `sin(t / 10000^(2k/d_pos))`, entry
/// `2k+1` the matching cosine.
pub fn positional_encoding(t: f64, d_pos: usize) -> Result<Vec<f64>> {
    if d_pos % 2 != 0 {
        return Err(Error::invalid(format!("d_pos must be even, got {d_pos}")));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("timestamp must be >= 0, got {t}")));
    }
    let mut out = Vec::with_capacity(d_pos);
    for k in 0..d_pos / 2 {
        let angle = t / 10000f64.powf(2.0 * k as f64 / d_pos as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// Constant per-edge inputs derived from timestamps.
#[derive(Clone, Debug)]
pub struct TemporalInputs {
    /// E×1 column of `Δt`.
    pub delta: Matrix,
    /// E×3 multi-scale features.
    pub multiscale: Matrix,
    /// E×(2·d_pos): source encoding followed by destination encoding.
    pub positions: Matrix,
}

impl TemporalInputs {
    /// Inputs for edges given as `(t_src, t_dst)` pairs.
    pub fn new(pairs: &[(u32, u32)], d_pos: usize) -> Result<Self> {
        let e = pairs.len();
        let mut delta = Vec::with_capacity(e);
        let mut multiscale = Vec::with_capacity(3 * e);
        let mut positions = Vec::with_capacity(2 * d_pos * e);
        for &(ts, td) in pairs {
            let dt = ts.abs_diff(td) as f64;
            delta.push(dt);
            multiscale.extend_from_slice(&multiscale_features(dt)?);
            positions.extend(positional_encoding(ts as f64, d_pos)?);
            positions.extend(positional_encoding(td as f64, d_pos)?);
        }
        Ok(Self {
            delta: Matrix::new(e, 1, delta)?,
            multiscale: Matrix::new(e, 3, multiscale)?,
            positions: Matrix::new(e, 2 * d_pos, positions)?,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.delta.rows()
    }
}

/// Pre-fusion pieces of the embedding, each E×(component width).
#[derive(Clone, Copy, Debug)]
pub struct TemporalComponents {
    pub delta: Var,
    pub position: Var,
    pub multiscale: Var,
}

/// Parameters of the temporal embedding pipeline.
#[derive(Clone, Debug)]
pub struct TemporalEmbedding {
    pub config: TemporalConfig,
    pub delta: Linear,
    pub position: Linear,
    pub multiscale: Linear,
    pub fusion: Linear,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
}

impl TemporalEmbedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: TemporalConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (d1, d2, d3) = (config.d1(), config.d2(), config.d3());
        let delta = Linear::new(store, &format!("{prefix}.delta"), 1, d1, true, rng);
        let position = Linear::new(store, &format!("{prefix}.position"), 2 * config.d_pos, d2, true, rng);
        let multiscale = Linear::new(store, &format!("{prefix}.multiscale"), 3, d3, true, rng);
        let fusion = Linear::new(store, &format!("{prefix}.fusion"), d1 + d2 + d3, config.d_t, true, rng);
        let norm_gain = store.add(format!("{prefix}.norm.gain"), Matrix::filled(1, config.d_t, 1.0));
        let norm_bias = store.zeros(format!("{prefix}.norm.bias"), 1, config.d_t);
        Ok(Self {
            config,
            delta,
            position,
            multiscale,
            fusion,
            norm_gain,
            norm_bias,
        })
    }

    pub fn components(&self, g: &mut Graph, b: &Bound, inputs: &TemporalInputs) -> Result<TemporalComponents> {
        if inputs.positions.cols() != 2 * self.config.d_pos {
            return Err(Error::shape(
                "temporal_embedding",
                format!(
                    "position inputs have {} columns, expected {}",
                    inputs.positions.cols(),
                    2 * self.config.d_pos
                ),
            ));
        }
        let dt = g.leaf(inputs.delta.clone());
        let pe = g.leaf(inputs.positions.clone());
        let ms = g.leaf(inputs.multiscale.clone());
        Ok(TemporalComponents {
            delta: self.delta.forward(g, b, dt)?,
            position: self.position.forward(g, b, pe)?,
            multiscale: self.multiscale.forward(g, b, ms)?,
        })
    }

    /// E×d_t embedding for every edge in `inputs`.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        inputs: &TemporalInputs,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let c = self.components(g, b, inputs)?;
        let joined = g.concat_cols(&[c.delta, c.position, c.multiscale])?;
        let fused = self.fusion.forward(g, b, joined)?;
        let normed = g.layer_norm(fused, b.var(self.norm_gain), b.var(self.norm_bias), LAYER_NORM_EPS)?;
        let act = g.relu(normed);
        g.dropout(act, self.config.dropout, mode, rng)
    }
}

/// Evaluates the `Δt` projection for a single value.
pub fn basic_delta_projection(delta: f64, store: &ParamStore, layer: &Linear) -> Result<Vec<f64>> {
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!("time difference must be >= 0, got {delta}")));
    }
    let mut out = Matrix::scalar(delta).matmul(store.get(layer.weight))?;
    if let Some(bias) = layer.bias {
        for (o, b) in out.as_mut_slice().iter_mut().zip(store.get(bias).as_slice()) {
            *o += b;
        }
    }
    Ok(out.into_vec())
}
