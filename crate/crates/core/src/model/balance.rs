//! Function-preserving rescaling of hidden channels.
//!
//! The seeded decoder hands the trainer features whose magnitudes differ by
//! orders of magnitude (a DC coefficient plane next to near-silent high
//! frequencies), which makes plain gradient descent crawl along some
//! directions while diverging along others. Rescaling each output channel and
//! compensating in the next layer leaves the network function unchanged but
//! evens out those magnitudes. The target RMS of a channel is `rms^gamma`:
//! `gamma = 1` leaves it alone, `gamma = 0` normalises it to unit RMS.

use super::{forward_train, rescalable, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-layer exponents used by the trainer before the first step.
pub const DEFAULT_BALANCE: &[(usize, f64)] = &[
    (2, 0.25),
    (3, 0.7),
    (5, 0.0),
    (6, 0.0),
    (8, 0.0),
    (9, 0.0),
    (11, 0.0),
    (12, 0.0),
    (14, 0.0),
    (15, 0.0),
];

/// Root-mean-square of every output channel of `layer` over the calibration inputs.
pub fn channel_rms(params: &ModelParams, inputs: &[Tensor], layer: usize) -> Result<Vec<f64>> {
    Ok(collect_rms(params, inputs, &[layer])?.remove(0))
}

fn collect_rms(params: &ModelParams, inputs: &[Tensor], layers: &[usize]) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(
            "balancing needs at least one calibration input".into(),
        ));
    }
    let mut sums: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
    let mut counts = vec![0usize; layers.len()];
    for input in inputs {
        let cache = forward_train(input, params)?;
        for (k, &layer) in layers.iter().enumerate() {
            let t = cache.linear_output(layer).ok_or_else(|| {
                Error::InvalidArgument(format!("layer {layer} has no rescalable output"))
            })?;
            let ch = t.shape()[0];
            if sums[k].is_empty() {
                sums[k] = vec![0.0; ch];
            }
            for (o, s) in sums[k].iter_mut().enumerate() {
                *s += t.channel(o).iter().map(|v| v * v).sum::<f64>();
            }
            counts[k] += t.len() / ch;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| (v / n as f64).sqrt()).collect())
        .collect())
}

/// Rescales the listed layers so each channel's RMS over `inputs` becomes
/// `rms^gamma`. Silent channels are left as they are. Statistics are gathered
/// in one pass: rescaling one layer never changes another layer's output.
pub fn balance_channels(
    params: &mut ModelParams,
    inputs: &[Tensor],
    plan: &[(usize, f64)],
) -> Result<()> {
    if let Some(&(layer, _)) = plan.iter().find(|(l, _)| !rescalable(*l)) {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} cannot be rescaled"
        )));
    }
    let layers: Vec<usize> = plan.iter().map(|p| p.0).collect();
    let rms = collect_rms(params, inputs, &layers)?;
    for (&(layer, gamma), rms) in plan.iter().zip(rms) {
        let scales: Vec<f64> = rms
            .iter()
            .map(|&r| if r > 1e-12 { r.powf(gamma - 1.0) } else { 1.0 })
            .collect();
        params.rescale_channels(layer, &scales)?;
    }
    Ok(())
}
