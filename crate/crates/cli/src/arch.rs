//! Architecture strings.
//!
//! ```text
//! mnist | faces | curves                  named autoencoders
//! autoencoder:784-256-32-256-784          ReLU hidden layers, linear code and output
//! dense:784:256:relu,dense:256:10:identity
//! conv:1:4:1:28x28:relu,dense:3136:10:identity
//! ```

use kronqn_core::nn::{Activation, ConvLayerSpec, DenseLayerSpec, Layer, LayerSpec, LossKind};

use crate::CliError;

/// Named autoencoders with their widths and loss.
pub const NAMED: &[(&str, &[usize], LossKind)] = &[
    ("mnist", &[784, 1000, 500, 250, 30, 250, 500, 1000, 784], LossKind::BceWithSigmoid),
    ("faces", &[625, 2000, 1000, 500, 30, 500, 1000, 2000, 625], LossKind::Mse),
    ("curves", &[784, 400, 200, 100, 50, 25, 6, 25, 50, 100, 200, 400, 784], LossKind::BceWithSigmoid),
];

/// Loss a named architecture is trained with, if the name is one of [`NAMED`].
pub fn named_loss(spec: &str) -> Option<LossKind> {
    NAMED.iter().find(|(n, _, _)| *n == spec).map(|&(_, _, loss)| loss)
}

fn bad(spec: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("architecture '{spec}': {why}"))
}

/// Symmetric autoencoder: ReLU everywhere except the middle (code) layer and
/// the output layer.
pub fn autoencoder(widths: &[usize]) -> Vec<Layer> {
    let n = widths.len() - 1;
    (0..n)
        .map(|i| {
            let linear = i + 1 == n || (n % 2 == 0 && i + 1 == n / 2);
            Layer {
                spec: LayerSpec::Dense(DenseLayerSpec { in_dim: widths[i], out_dim: widths[i + 1] }),
                activation: if linear { Activation::Identity } else { Activation::Relu },
            }
        })
        .collect()
}

pub fn parse_architecture(spec: &str) -> Result<Vec<Layer>, CliError> {
    let spec = spec.trim();
    if let Some(&(_, widths, _)) = NAMED.iter().find(|(n, _, _)| *n == spec) {
        return Ok(autoencoder(widths));
    }
    if let Some(rest) = spec.strip_prefix("autoencoder:") {
        let widths = rest
            .split('-')
            .map(|w| w.trim().parse::<usize>().map_err(|e| bad(spec, format!("width '{w}': {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if widths.len() < 2 || widths.contains(&0) {
            return Err(bad(spec, "need at least two positive widths"));
        }
        return Ok(autoencoder(&widths));
    }
    let layers = spec.split(',').map(|l| parse_layer(spec, l.trim())).collect::<Result<Vec<_>, _>>()?;
    if layers.is_empty() {
        return Err(bad(spec, "no layers"));
    }
    Ok(layers)
}

fn parse_layer(spec: &str, s: &str) -> Result<Layer, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.parse::<usize>().map_err(|e| bad(spec, format!("'{p}' in '{s}': {e}")));
    let act = |p: &str| p.parse::<Activation>().map_err(|e| bad(spec, e));
    match parts.as_slice() {
        ["dense", i, o, a] => Ok(Layer {
            spec: LayerSpec::Dense(DenseLayerSpec { in_dim: num(i)?, out_dim: num(o)? }),
            activation: act(a)?,
        }),
        ["conv", j, i, r, hw, a] => {
            let (h, w) = hw.split_once('x').ok_or_else(|| bad(spec, format!("expected HxW in '{s}'")))?;
            Ok(Layer {
                spec: LayerSpec::Conv(ConvLayerSpec {
                    in_channels: num(j)?,
                    out_channels: num(i)?,
                    radius: num(r)?,
                    height: num(h)?,
                    width: num(w)?,
                }),
                activation: act(a)?,
            })
        }
        _ => Err(bad(spec, format!("cannot parse layer '{s}' (dense:IN:OUT:ACT or conv:J:I:R:HxW:ACT)"))),
    }
}
