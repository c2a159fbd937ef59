//! Preference-guided environment generators.
//!
//! Each of the `K` generators scores every observed social edge from the
//! concatenated endpoint embeddings, turns the score into a relaxed keep
//! sample with logistic noise and temperature `t`, and adds the observation
//! bias `ε` (capped at 1). Non-edges never receive weight.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SocialGraph;
use crate::error::{Error, Result};
use crate::numerics::{mlp2_forward, DenseMatrix, Mlp2, Mlp2Vars, Tape, Var};
use crate::rng;

/// Hidden activation of the generator MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

/// The `K` independent generator MLPs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvGenerators {
    pub mlps: Vec<Mlp2>,
}

impl EnvGenerators {
    /// Generator `k` is initialized from its own stream `(seed, init-gen, k)`.
    pub fn init(k: usize, dim: usize, hidden: usize, seed: u64) -> Self {
        Self {
            mlps: (0..k)
                .map(|i| {
                    Mlp2::init(
                        2 * dim,
                        hidden,
                        &mut rng::stream(seed, rng::tag::INIT_GEN, &[i as u64]),
                    )
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mlps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mlps.is_empty()
    }
}

/// Per-edge weights in `[0, 1]` aligned with the canonical edge order of `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSocialGraph {
    pub base: SocialGraph,
    pub weights: Vec<f64>,
}

impl SoftSocialGraph {
    /// Writes `src,dst,weight` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut body = String::from("src,dst,weight\n");
        for (&(a, b), w) in self.base.edges().iter().zip(&self.weights) {
            body.push_str(&format!("{a},{b},{w}\n"));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn validate_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "relaxation temperature {t} must be > 0"
        )))
    }
}

pub fn validate_bias(eps: f64) -> Result<()> {
    if (0.0..1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "observation bias {eps} outside [0, 1)"
        )))
    }
}

/// `log(δ/(1−δ))` for `δ ~ U(0,1)` with both endpoints excluded.
pub fn logistic_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let d: f64 = rng.sample(Open01);
            (d / (1.0 - d)).ln()
        })
        .collect()
}

/// `sigmoid((log(δ/(1−δ)) + w) / t)` for given logistic noise.
pub fn concrete_relax(logits: &[f64], noise: &[f64], t: f64) -> Result<Vec<f64>> {
    validate_temperature(t)?;
    let mut tape = Tape::new();
    let w = tape.leaf(DenseMatrix::column(logits.to_vec()));
    let s = tape.concrete_relax(w, noise, t)?;
    Ok(tape.value(s).data().to_vec())
}

/// Edge logits `g(e_src ‖ e_dst)` on the tape.
pub fn edge_logits(
    tape: &mut Tape,
    generator: &Mlp2Vars,
    activation: Activation,
    user_embeds: Var,
    social: &SocialGraph,
) -> Result<Var> {
    let src: Vec<usize> = social.edges().iter().map(|&(a, _)| a as usize).collect();
    let dst: Vec<usize> = social.edges().iter().map(|&(_, b)| b as usize).collect();
    let ea = tape.gather_rows(user_embeds, src)?;
    let eb = tape.gather_rows(user_embeds, dst)?;
    let x = tape.concat_cols(ea, eb)?;
    match activation {
        Activation::Relu => mlp2_forward(tape, x, generator),
        Activation::Tanh => {
            let h = tape.matmul(x, generator.w1)?;
            let h = tape.add_row(h, generator.b1)?;
            let h = tape.tanh(h);
            let o = tape.matmul(h, generator.w2)?;
            tape.add_row(o, generator.b2)
        }
    }
}

/// One environment's social weights `min(relax(w) + ε, 1)` as a `|S| × 1` node.
#[allow(clippy::too_many_arguments)]
pub fn sample_environment_on_tape(
    tape: &mut Tape,
    generator: &Mlp2Vars,
    activation: Activation,
    user_embeds: Var,
    social: &SocialGraph,
    noise: &[f64],
    t: f64,
    eps: f64,
) -> Result<Var> {
    validate_temperature(t)?;
    validate_bias(eps)?;
    let logits = edge_logits(tape, generator, activation, user_embeds, social)?;
    let relaxed = tape.concrete_relax(logits, noise, t)?;
    Ok(tape.bias_clamp(relaxed, eps))
}

/// Samples one soft social graph without recording gradients.
pub fn sample_environment(
    generator: &Mlp2,
    activation: Activation,
    user_embeds: &DenseMatrix,
    social: &SocialGraph,
    t: f64,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<SoftSocialGraph> {
    let noise = logistic_noise(social.len(), rng);
    let mut tape = Tape::new();
    let vars = generator.on_tape(&mut tape);
    let u = tape.leaf(user_embeds.clone());
    let w = sample_environment_on_tape(&mut tape, &vars, activation, u, social, &noise, t, eps)?;
    Ok(SoftSocialGraph {
        base: social.clone(),
        weights: tape.value(w).data().to_vec(),
    })
}

/// All `K` environments; environment `k` draws its noise from
/// `(seed, edge-noise, index, k)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_all(
    generators: &EnvGenerators,
    activation: Activation,
    user_embeds: &DenseMatrix,
    social: &SocialGraph,
    t: f64,
    eps: f64,
    seed: u64,
    index: u64,
) -> Result<Vec<SoftSocialGraph>> {
    if generators.is_empty() {
        return Err(Error::Config(
            "at least one environment generator is required".into(),
        ));
    }
    generators
        .mlps
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut rng = rng::stream(seed, rng::tag::EDGE_NOISE, &[index, k as u64]);
            sample_environment(g, activation, user_embeds, social, t, eps, &mut rng)
        })
        .collect()
}
