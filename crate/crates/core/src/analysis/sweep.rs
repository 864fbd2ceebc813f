//! Grid runs over the Lipschitz bound and the noise level.
//!
//! Every training cell uses the same base seed: the datasets for all
//! `sigma_train` values share one RNG stream (same sampled instants, noise
//! scaled by sigma), and all `gamma` values share the split, initialization
//! and shuffling streams. Evaluation datasets come from a separate stream.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use super::lipschitz::network_lipschitz;
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::lipnet::LipNetParams;
use crate::numcore::RngState;
use crate::observer::{build_dataset, DataSpec, ObserverLti, PairedDataset};
use crate::training::{mse, split_for_config, train, TrainConfig, TrainHistory};

pub const DATA_STREAM: u64 = 10;
pub const EVAL_STREAM: u64 = 11;
pub const PROBE_STREAM: u64 = 12;

pub const SWEEP_CSV_HEADER: &str =
    "gamma,sigma_train,sigma_eval,train_loss,val_loss,emp_lipschitz,seed";

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub gammas: Vec<f64>,
    pub sigmas_train: Vec<f64>,
    pub sigmas_eval: Vec<f64>,
    pub data: DataSpec,
    /// `gamma` and `seed` are overridden per cell.
    pub train: TrainConfig,
    pub seed: u64,
    pub lipschitz_probes: usize,
    pub parallel: bool,
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub sigma_train: f64,
    /// `None` for training rows.
    pub sigma_eval: Option<f64>,
    /// `None` for evaluation rows.
    pub train_loss: Option<f64>,
    /// Validation loss for training rows, loss on the fresh noisy dataset for evaluation rows.
    pub val_loss: f64,
    pub emp_lipschitz: f64,
    pub seed: u64,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(
        gamma: f64,
        sigma_train: f64,
        sigma_eval: Option<f64>,
        seed: u64,
        err: &Error,
    ) -> Self {
        SweepRow {
            gamma,
            sigma_train,
            sigma_eval,
            train_loss: None,
            val_loss: f64::NAN,
            emp_lipschitz: f64::NAN,
            seed,
            error: Some(err.to_string()),
        }
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let train = if self.error.is_some() {
            "NaN".to_string()
        } else {
            opt(self.train_loss)
        };
        format!(
            "{},{},{},{},{},{},{}",
            fmt_f64(self.gamma),
            fmt_f64(self.sigma_train),
            opt(self.sigma_eval),
            train,
            fmt_f64(self.val_loss),
            fmt_f64(self.emp_lipschitz),
            self.seed
        )
    }
}

/// A trained cell with its artifacts.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub row: SweepRow,
    pub model: Option<(LipNetParams, TrainHistory)>,
}

fn cell_error(gamma: f64, sigma: f64, e: &Error) -> Error {
    Error::SweepCell {
        gamma,
        sigma,
        source: Box::new(e.duplicate()),
    }
}

#[derive(Debug)]
pub struct SweepTable {
    /// One per `(sigma_train, gamma)`, sigma-major.
    pub cells: Vec<TrainedCell>,
    /// One per `(gamma, sigma_eval)` for the noiselessly trained networks.
    pub eval_rows: Vec<SweepRow>,
    /// Failed cells in grid order, training cells first.
    pub failures: Vec<Error>,
}

impl SweepTable {
    pub fn train_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.cells.iter().map(|c| &c.row)
    }

    pub fn row(&self, gamma: f64, sigma_train: f64) -> Option<&SweepRow> {
        self.train_rows()
            .find(|r| r.gamma == gamma && r.sigma_train == sigma_train)
    }

    pub fn eval_row(&self, gamma: f64, sigma_eval: f64) -> Option<&SweepRow> {
        self.eval_rows
            .iter()
            .find(|r| r.gamma == gamma && r.sigma_eval == Some(sigma_eval))
    }

    /// The first failed cell in grid order, if any.
    pub fn first_error(&self) -> Option<&Error> {
        self.failures.first()
    }

    pub fn write_train_csv(&self, w: impl Write) -> Result<()> {
        write_rows(w, self.train_rows())
    }

    pub fn write_eval_csv(&self, w: impl Write) -> Result<()> {
        write_rows(w, self.eval_rows.iter())
    }
}

fn write_rows<'a>(mut w: impl Write, rows: impl Iterator<Item = &'a SweepRow>) -> Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

fn map_cells<T: Send, R: Send>(
    items: Vec<T>,
    parallel: bool,
    f: impl Fn(T) -> R + Sync + Send,
) -> Vec<R> {
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

fn train_cell(
    ds: &PairedDataset,
    cfg: &TrainConfig,
    probes: usize,
    seed: u64,
) -> Result<(SweepRow, LipNetParams, TrainHistory)> {
    let (params, history) = train(ds, cfg)?;
    let (train_set, _) = split_for_config(ds, cfg)?;
    let zs: Vec<Vec<f64>> = train_set.records.iter().map(|r| r.z.clone()).collect();
    let lip = network_lipschitz(
        &params,
        &zs,
        probes,
        &mut RngState::with_stream(seed, PROBE_STREAM),
    )?;
    let row = SweepRow {
        gamma: cfg.gamma,
        sigma_train: ds.meta.sigma,
        sigma_eval: None,
        train_loss: Some(history.final_train_loss()),
        val_loss: history.val_loss,
        emp_lipschitz: lip,
        seed,
        error: None,
    };
    Ok((row, params, history))
}

/// Trains one network per `(sigma_train, gamma)` and evaluates the
/// noiselessly trained ones at every `sigma_eval`.
///
/// Cell failures are recorded in their rows; see [`SweepTable::first_error`].
pub fn run_gamma_sweep(
    sys: &SystemModel,
    obs: &ObserverLti,
    spec: &SweepSpec,
) -> Result<SweepTable> {
    if spec.gammas.is_empty() || spec.sigmas_train.is_empty() {
        return Err(Error::invalid("sweep grids must be nonempty"));
    }
    let seed = spec.seed;
    let mut train_sigmas = spec.sigmas_train.clone();
    if !spec.sigmas_eval.is_empty() && !train_sigmas.contains(&0.0) {
        train_sigmas.push(0.0);
    }

    let datasets: Vec<(f64, Result<PairedDataset>)> =
        map_cells(train_sigmas.clone(), spec.parallel, |sigma| {
            let data = DataSpec {
                sigma,
                ..spec.data.clone()
            };
            let ds = build_dataset(
                sys,
                obs,
                &data,
                &mut RngState::with_stream(seed, DATA_STREAM),
            );
            (sigma, ds)
        });

    let jobs: Vec<(f64, f64)> = train_sigmas
        .iter()
        .flat_map(|&s| spec.gammas.iter().map(move |&g| (s, g)))
        .collect();
    let trained: Vec<(TrainedCell, Option<Error>)> =
        map_cells(jobs, spec.parallel, |(sigma, gamma)| {
            let ds = datasets
                .iter()
                .find(|(s, _)| *s == sigma)
                .map(|(_, d)| d)
                .expect("dataset built for every sigma");
            let cfg = TrainConfig {
                gamma,
                seed,
                ..spec.train.clone()
            };
            let outcome = ds
                .as_ref()
                .map_err(Error::duplicate)
                .and_then(|ds| train_cell(ds, &cfg, spec.lipschitz_probes, seed));
            match outcome {
                Ok((row, params, history)) => (
                    TrainedCell {
                        row,
                        model: Some((params, history)),
                    },
                    None,
                ),
                Err(e) => (
                    TrainedCell {
                        row: SweepRow::failed(gamma, sigma, None, seed, &e),
                        model: None,
                    },
                    Some(cell_error(gamma, sigma, &e)),
                ),
            }
        });

    let eval_sets: BTreeMap<u64, Result<PairedDataset>> =
        map_cells(spec.sigmas_eval.clone(), spec.parallel, |sigma| {
            let data = DataSpec {
                sigma,
                ..spec.data.clone()
            };
            let ds = build_dataset(
                sys,
                obs,
                &data,
                &mut RngState::with_stream(seed, EVAL_STREAM),
            );
            (sigma.to_bits(), ds)
        })
        .into_iter()
        .collect();

    let eval_jobs: Vec<(f64, f64)> = spec
        .gammas
        .iter()
        .flat_map(|&g| spec.sigmas_eval.iter().map(move |&s| (g, s)))
        .collect();
    let eval_out: Vec<(SweepRow, Option<Error>)> =
        map_cells(eval_jobs, spec.parallel, |(gamma, sigma_eval)| {
            let (cell, _) = trained
                .iter()
                .find(|(c, _)| c.row.gamma == gamma && c.row.sigma_train == 0.0)
                .expect("noiseless cell exists");
            let outcome = (|| -> Result<SweepRow> {
                let (params, _) = cell
                    .model
                    .as_ref()
                    .ok_or_else(|| Error::invalid(cell.row.error.clone().unwrap_or_default()))?;
                let ds = eval_sets[&sigma_eval.to_bits()]
                    .as_ref()
                    .map_err(Error::duplicate)?;
                Ok(SweepRow {
                    gamma,
                    sigma_train: 0.0,
                    sigma_eval: Some(sigma_eval),
                    train_loss: None,
                    val_loss: mse(params, ds)?,
                    emp_lipschitz: cell.row.emp_lipschitz,
                    seed,
                    error: None,
                })
            })();
            match outcome {
                Ok(row) => (row, None),
                Err(e) => (
                    SweepRow::failed(gamma, 0.0, Some(sigma_eval), seed, &e),
                    Some(cell_error(gamma, 0.0, &e)),
                ),
            }
        });

    let mut failures = Vec::new();
    let mut cells = Vec::new();
    for (cell, err) in trained {
        if spec.sigmas_train.contains(&cell.row.sigma_train) {
            failures.extend(err);
            cells.push(cell);
        }
    }
    let mut eval_rows = Vec::with_capacity(eval_out.len());
    for (row, err) in eval_out {
        // a failed noiseless cell is already reported once
        if err.is_some() && !failures.iter().any(|f| matches!(f, Error::SweepCell { gamma, sigma, .. } if *gamma == row.gamma && *sigma == 0.0)) {
            failures.extend(err);
        }
        eval_rows.push(row);
    }
    Ok(SweepTable {
        cells,
        eval_rows,
        failures,
    })
}
