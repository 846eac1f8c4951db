//! The full forecaster: adaptive graph, long and short encoders, fusion,
//! attention refinement and the masked decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Census;
use crate::error::{Error, Result};
use crate::graph_learning::{masked_propagation, NodeEmbeddings, ResourceMask};
use crate::numerics::{Param, Parameterized, Tape, Value};
use crate::rast::{
    decoder_forecast, long_encoder, short_encoder, Decoder, Forecast, InceptionBank, LongEncoder, ShortEncoder,
    LONG_DILATIONS,
};
use crate::state::{assemble_state, attention_refine, fuse, select_horizon, AgentState, AttentionBlock};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nodes: usize,
    pub input_channels: usize,
    pub embed_dim: usize,
    pub saturation: f64,
    pub conv_channels: usize,
    pub features: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub decoder_hidden: usize,
    pub k_max: usize,
    pub short_window: usize,
    pub temperature: f64,
}

impl ModelConfig {
    pub fn new(nodes: usize) -> Self {
        ModelConfig {
            nodes,
            input_channels: 3,
            embed_dim: 10,
            saturation: 3.0,
            conv_channels: 32,
            features: 64,
            heads: 4,
            ffn_hidden: 128,
            decoder_hidden: 64,
            k_max: 12,
            short_window: 12,
            temperature: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("input_channels", self.input_channels),
            ("embed_dim", self.embed_dim),
            ("conv_channels", self.conv_channels),
            ("features", self.features),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("k_max", self.k_max),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.features % self.heads != 0 {
            return Err(Error::invalid("features must be divisible by heads"));
        }
        if self.saturation <= 0.0 || self.temperature <= 0.0 {
            return Err(Error::invalid("saturation and temperature must be positive"));
        }
        Ok(())
    }

    /// Shortest history the forecaster built from this config accepts.
    pub fn history_needed(&self) -> usize {
        let long = 1 + LONG_DILATIONS.iter().map(|&d| InceptionBank::receptive_field(d) - 1).sum::<usize>();
        long.max(self.short_window)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Forecaster {
    pub config: ModelConfig,
    pub embeddings: NodeEmbeddings,
    pub long: LongEncoder,
    pub short: ShortEncoder,
    pub attention: AttentionBlock,
    pub decoder: Decoder,
}

/// One forward pass. `refined` and `forecast.values` stay on the tape.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub gamma: f64,
    pub refined: Value,
    pub forecast: Forecast,
}

impl Forecaster {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(Forecaster {
            embeddings: NodeEmbeddings::new(rng, c.nodes, c.embed_dim, c.saturation),
            long: LongEncoder::new(rng, c.input_channels, c.conv_channels, c.features, &LONG_DILATIONS, c.temperature),
            short: ShortEncoder::new(rng, c.input_channels, c.features, c.short_window),
            attention: AttentionBlock::new(rng, c.features, c.ffn_hidden, c.heads)?,
            decoder: Decoder::new(rng, c.features, c.decoder_hidden, c.k_max),
            config,
        })
    }

    /// History steps the model reads.
    pub fn history_needed(&self) -> usize {
        self.long.receptive_field().max(self.config.short_window)
    }

    /// `x: [N × C × L]`, conditioned on the idle-resource census.
    pub fn forward(&self, tape: &mut Tape, x: &Value, census: &Census, total_resources: usize) -> Result<ModelOutput> {
        if total_resources == 0 {
            return Err(Error::invalid("total_resources must be positive"));
        }
        if census.per_node.len() != self.config.nodes {
            return Err(Error::shape("Forecaster::forward", &[census.per_node.len()], &[self.config.nodes]));
        }
        let gamma = (census.idle as f64 / total_resources as f64).clamp(0.0, 1.0);
        let mask = ResourceMask::from_census(&census.per_node);
        let adj = masked_propagation(tape, &self.embeddings, &mask)?;
        let h_long = long_encoder(tape, x, &self.long, &adj, gamma)?;
        let h_short = short_encoder(tape, x, &self.short)?;
        let fused = fuse(tape, &h_short, &h_long, gamma)?;
        let refined = attention_refine(tape, &fused, &self.attention)?;
        let k = select_horizon(gamma, self.config.k_max);
        let forecast = decoder_forecast(tape, &refined, k, &self.decoder)?;
        Ok(ModelOutput {
            gamma,
            refined,
            forecast,
        })
    }

    pub fn agent_state(&self, output: &ModelOutput, census: &Census, coords: &[[f64; 2]]) -> Result<AgentState> {
        assemble_state(&output.refined.detach(), &census.per_node, coords)
    }

    /// Width of the agent-state rows this model produces.
    pub fn state_width(&self) -> usize {
        self.config.features + 3
    }
}

impl Parameterized for Forecaster {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.embeddings.params();
        v.extend(self.long.params());
        v.extend(self.short.params());
        v.extend(self.attention.params());
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embeddings.params_mut();
        v.extend(self.long.params_mut());
        v.extend(self.short.params_mut());
        v.extend(self.attention.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }
}

/// Mean squared error over the first `k` horizon steps.
/// `pred: [N × k_max]`, `truth: [k_max × N]` row-major. Later steps
/// contribute neither loss nor gradient.
pub fn forecast_loss(tape: &mut Tape, pred: &Value, truth: &[f64], k: usize) -> Result<Value> {
    if pred.shape().len() != 2 {
        return Err(Error::shape("forecast_loss", pred.shape(), &[]));
    }
    let (n, k_max) = (pred.rows(), pred.cols());
    if k == 0 || k > k_max {
        return Err(Error::invalid(format!("horizon {k} outside [1, {k_max}]")));
    }
    if truth.len() != n * k_max {
        return Err(Error::shape("forecast_loss", &[k_max, n], &[truth.len()]));
    }
    let mut target = vec![0.0; n * k_max];
    let mut mask = vec![0.0; n * k_max];
    for i in 0..n {
        for j in 0..k {
            target[i * k_max + j] = truth[j * n + i];
            mask[i * k_max + j] = 1.0;
        }
    }
    let diff = tape.sub(pred, &Value::new(vec![n, k_max], target)?)?;
    let masked = tape.mul(&diff, &Value::new(vec![n, k_max], mask)?)?;
    let sq = tape.square(&masked)?;
    let total = tape.sum(&sq)?;
    tape.scale(&total, 1.0 / (n * k) as f64)
}
