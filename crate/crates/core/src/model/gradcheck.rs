//! Whole-network finite-difference check.
//!
//! Parameters and inputs are random, the loss is MSE against a random target, and
//! a stratified sample of parameter coordinates (every trainable layer, weights
//! and biases) is compared against central differences. A coordinate whose
//! perturbation moves any ReLU pre-activation across zero is redrawn: the loss is
//! not differentiable there and the difference quotient is meaningless.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{layer, FIRST_TRAINABLE, LAYER_COUNT};
use super::network::{backward, forward_train, ForwardCache};
use super::params::{init_params, InitScheme, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{mse_loss, Tensor};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Side of the square k-space input.
    pub size: usize,
    pub samples_per_layer: usize,
    /// Additional coordinates drawn from the k-space input.
    pub input_samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, relative to the largest sampled
    /// gradient magnitude: `|a - n| / max(|a|, |n|, floor * max|a|)`.
    pub relative_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            size: 16,
            samples_per_layer: 16,
            input_samples: 16,
            step: 1e-5,
            tolerance: 1e-4,
            relative_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    /// Layer index, or 0 for a k-space input coordinate.
    pub layer: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub samples: Vec<GradSample>,
    /// Coordinates redrawn because a perturbation crossed a ReLU kink.
    pub redrawn: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    pub fn median_rel_error(&self) -> f64 {
        let mut e: Vec<f64> = self.samples.iter().map(|s| s.rel_error).collect();
        e.sort_by(f64::total_cmp);
        e.get(e.len() / 2).copied().unwrap_or(0.0)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradSample> {
        self.samples
            .iter()
            .filter(|s| !(s.rel_error < self.tolerance))
    }

    pub fn passed(&self) -> bool {
        !self.samples.is_empty() && self.failures().next().is_none()
    }

    /// One CSV row per sample (`layer,index,analytic,numeric,rel_error`).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,index,analytic,numeric,rel_error\n");
        for g in &self.samples {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e}",
                g.layer, g.index, g.analytic, g.numeric, g.rel_error
            );
        }
        s
    }
}

fn loss_of(cache: &ForwardCache, target: &Tensor) -> Result<(f64, Tensor)> {
    mse_loss(&cache.output(), target)
}

/// Signs of every ReLU pre-activation; equal patterns mean the loss is smooth
/// along the segment between two evaluations.
fn kink_pattern(cache: &ForwardCache) -> Vec<bool> {
    let (l4, last) = cache.relu_inputs();
    l4.data()
        .iter()
        .chain(last.data())
        .map(|&v| v > 0.0)
        .collect()
}

struct Problem {
    params: ModelParams,
    input: Tensor,
    target: Tensor,
}

impl Problem {
    fn eval(&self, params: &ModelParams, input: &Tensor) -> Result<(f64, Vec<bool>)> {
        let cache = forward_train(input, params)?;
        Ok((loss_of(&cache, &self.target)?.0, kink_pattern(&cache)))
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    let d = (a - n).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(n.abs()).max(floor)
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(InitScheme::UniformFanIn, 50, rng.gen())?;
    for i in FIRST_TRAINABLE..=LAYER_COUNT {
        for b in &mut params.layer_mut(i).bias {
            *b = rng.gen_range(-1.0..1.0);
        }
    }
    // Keep the decoded image mostly positive so the ReLUs carry gradient.
    params.layer_mut(4).bias[0] = 64.0;
    let n = cfg.size * cfg.size;
    let input = Tensor::new(
        &[1, cfg.size, cfg.size],
        (0..n).map(|_| rng.gen_range(-20i32..=20) as f64).collect(),
    )?;
    let target = Tensor::new(
        &[1, cfg.size, cfg.size],
        (0..n).map(|_| rng.gen_range(0.0..255.0)).collect(),
    )?;
    let problem = Problem {
        params,
        input,
        target,
    };

    let cache = forward_train(&problem.input, &problem.params)?;
    let base_pattern = kink_pattern(&cache);
    let (_, dloss) = loss_of(&cache, &problem.target)?;
    let grads = backward(&problem.params, &cache, &dloss, true)?;
    let grad_input = grads.input.expect("requested input gradient");

    // Offsets of each layer in the flat parameter vector.
    let mut offset = 0;
    let mut raw = Vec::new();
    let mut redrawn = 0;
    for i in FIRST_TRAINABLE..=LAYER_COUNT {
        let (wlen, blen) = (
            layer(i).weight_shape().iter().product::<usize>(),
            layer(i).out_channels,
        );
        let bias_draws = (cfg.samples_per_layer / 4).max(1);
        let mut taken = 0;
        let mut attempts = 0;
        while taken < cfg.samples_per_layer {
            attempts += 1;
            if attempts > 50 * cfg.samples_per_layer {
                return Err(Error::Layer {
                    layer: i,
                    detail:
                        "almost every perturbation crosses a ReLU kink; try another seed or step"
                            .into(),
                });
            }
            let local = if taken < bias_draws {
                wlen + rng.gen_range(0..blen)
            } else {
                rng.gen_range(0..wlen)
            };
            let flat = offset + local;
            let v = problem.params.get_flat(flat);
            let mut p = problem.params.clone();
            p.set_flat(flat, v + cfg.step);
            let (lp, kp) = problem.eval(&p, &problem.input)?;
            p.set_flat(flat, v - cfg.step);
            let (lm, km) = problem.eval(&p, &problem.input)?;
            if kp != base_pattern || km != base_pattern {
                redrawn += 1;
                continue;
            }
            raw.push((
                i,
                local,
                grads.params.get_flat(flat),
                (lp - lm) / (2.0 * cfg.step),
            ));
            taken += 1;
        }
        offset += wlen + blen;
    }

    let mut taken = 0;
    let mut attempts = 0;
    while taken < cfg.input_samples {
        attempts += 1;
        if attempts > 50 * cfg.input_samples.max(1) {
            return Err(Error::InvalidArgument(
                "almost every input perturbation crosses a ReLU kink; try another seed or step"
                    .into(),
            ));
        }
        let idx = rng.gen_range(0..n);
        let mut x = problem.input.clone();
        x.data_mut()[idx] += cfg.step;
        let (lp, kp) = problem.eval(&problem.params, &x)?;
        x.data_mut()[idx] -= 2.0 * cfg.step;
        let (lm, km) = problem.eval(&problem.params, &x)?;
        if kp != base_pattern || km != base_pattern {
            redrawn += 1;
            continue;
        }
        raw.push((0, idx, grad_input.data()[idx], (lp - lm) / (2.0 * cfg.step)));
        taken += 1;
    }

    let scale = raw.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
    let floor = cfg.relative_floor * scale;
    let samples = raw
        .into_iter()
        .map(|(layer, index, analytic, numeric)| GradSample {
            layer,
            index,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric, floor),
        })
        .collect();
    Ok(GradcheckReport {
        samples,
        redrawn,
        tolerance: cfg.tolerance,
    })
}
