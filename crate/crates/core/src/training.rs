//! Minibatch SGD on the mean squared observation error.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::lipnet::{init_params, Gradient, LipNetParams, PreparedNet};
use crate::numcore::RngState;
use crate::observer::PairedDataset;

/// RNG stream of the training seed reserved for each random step.
const SPLIT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub split_fraction: f64,
    pub seed: u64,
    pub gamma: f64,
    /// Heavy-ball coefficient; 0 gives plain SGD.
    pub momentum: f64,
    pub hidden_widths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 64,
            split_fraction: 0.8,
            seed: 0,
            gamma: 10.0,
            momentum: 0.0,
            hidden_widths: vec![8, 8],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::invalid("split_fraction must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    /// `(input, hidden…, output)` for a dataset's dimensions.
    pub fn widths(&self, nz: usize, n: usize) -> Vec<usize> {
        let mut w = vec![nz];
        w.extend_from_slice(&self.hidden_widths);
        w.push(n);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub initial_train_loss: f64,
    /// Full training-split loss after each epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: f64,
    pub wall_time_secs: f64,
}

impl TrainHistory {
    pub fn final_train_loss(&self) -> f64 {
        *self.train_loss.last().unwrap_or(&self.initial_train_loss)
    }

    /// CSV `epoch,train_loss`, epochs numbered from 1.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,train_loss")?;
        for (e, l) in self.train_loss.iter().enumerate() {
            writeln!(w, "{},{}", e + 1, fmt_f64(*l))?;
        }
        Ok(())
    }
}

/// Index sets of a train/validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

pub fn split_indices(len: usize, fraction: f64, rng: &mut RngState) -> Result<SplitIndices> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n_train = (fraction * len as f64).round() as usize;
    let n_val = len.saturating_sub(n_train);
    if n_train == 0 || n_val == 0 {
        return Err(Error::EmptyPartition {
            train: n_train,
            val: n_val,
        });
    }
    let mut perm: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut perm);
    let val = perm.split_off(n_train);
    Ok(SplitIndices { train: perm, val })
}

/// Uniformly random disjoint split; `fraction` of the records go to training.
pub fn split(
    ds: &PairedDataset,
    fraction: f64,
    rng: &mut RngState,
) -> Result<(PairedDataset, PairedDataset)> {
    let idx = split_indices(ds.len(), fraction, rng)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.val)))
}

/// The split [`train`] uses for this dataset and configuration.
pub fn split_for_config(
    ds: &PairedDataset,
    cfg: &TrainConfig,
) -> Result<(PairedDataset, PairedDataset)> {
    split(
        ds,
        cfg.split_fraction,
        &mut RngState::with_stream(cfg.seed, SPLIT_STREAM),
    )
}

/// Mean over records of `‖net(z) − x‖²`.
pub fn mse(net: &LipNetParams, ds: &PairedDataset) -> Result<f64> {
    mse_prepared(&PreparedNet::new(net)?, ds)
}

pub fn mse_prepared(net: &PreparedNet<'_>, ds: &PairedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("mse of an empty dataset"));
    }
    let mut total = 0.0;
    for r in &ds.records {
        let xhat = net.forward(&r.z)?;
        if xhat.len() != r.x.len() {
            return Err(Error::DimensionMismatch {
                context: "network output vs state",
                expected: r.x.len(),
                actual: xhat.len(),
            });
        }
        total += xhat
            .iter()
            .zip(&r.x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / ds.len() as f64)
}

/// Non-finite parameters surface as NaN entries or singular Cayley factors.
fn diverged(e: Error, epoch: usize) -> Error {
    if e.is_numeric() || matches!(e, Error::NonFinite(_)) {
        Error::TrainingDivergence {
            epoch,
            loss: f64::NAN,
        }
    } else {
        e
    }
}

/// Trains from a fresh initialization; returns the final-epoch parameters.
pub fn train(ds: &PairedDataset, cfg: &TrainConfig) -> Result<(LipNetParams, TrainHistory)> {
    cfg.validate()?;
    let started = Instant::now();
    let (train_set, val_set) = split_for_config(ds, cfg)?;
    let widths = cfg.widths(ds.nz(), ds.state_dim());
    let mut params = init_params(
        &widths,
        cfg.hidden_widths.len(),
        cfg.gamma,
        &mut RngState::with_stream(cfg.seed, INIT_STREAM),
    )?;
    let mut shuffle_rng = RngState::with_stream(cfg.seed, SHUFFLE_STREAM);

    let initial_train_loss = mse(&params, &train_set)?;
    let pairs = train_set.pairs();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut velocity = (cfg.momentum > 0.0).then(|| Gradient::zeros_like(&params));
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut batch: Vec<(&[f64], &[f64])> = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i]));
            let (_, grad) = PreparedNet::new(&params)
                .and_then(|net| net.loss_and_gradient(&batch))
                .map_err(|e| diverged(e, epoch))?;
            match velocity.as_mut() {
                Some(v) => {
                    v.scale_add(cfg.momentum, &grad);
                    params.add_scaled(-cfg.learning_rate, v);
                }
                None => params.add_scaled(-cfg.learning_rate, &grad),
            }
        }
        let loss = mse(&params, &train_set).map_err(|e| diverged(e, epoch))?;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch, loss });
        }
        train_loss.push(loss);
    }
    let val_loss = mse(&params, &val_set)?;
    Ok((
        params,
        TrainHistory {
            initial_train_loss,
            train_loss,
            val_loss,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    ))
}
