use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kkl::analysis::{
    essential_state_bound, estimate_immersion_lipschitz, generalization_bound, h2_norm,
    network_lipschitz, run_gamma_sweep, transient_bound, BoundInputs, BoundReport, SweepSpec,
    SweepTable, DATA_STREAM, PROBE_STREAM,
};
use kkl::dynamics::grid_steps;
use kkl::io::fmt_f64;
use kkl::lipnet::{LipNetParams, PreparedNet};
use kkl::numcore::RngState;
use kkl::observer::{
    build_dataset, build_dataset_with_run, estimate_states, observe_run, rebuild_dataset,
    DatasetMeta, PairedDataset,
};
use kkl::training::{mse, split_for_config, train};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::svg::{render, Plot, Series};

/// Noise stream for observer evaluation episodes.
pub const OBSERVE_STREAM: u64 = 13;

type CliResult<T> = Result<T, CliError>;

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> kkl::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(path, &buf)
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Sidecar next to a dataset CSV.
#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    meta: DatasetMeta,
    records: usize,
    config: RunConfig,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn load_dataset(csv: &Path) -> CliResult<PairedDataset> {
    let side = sidecar_path(csv);
    let sidecar: DatasetSidecar = serde_json::from_str(&read_file(&side)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", side.display())))?;
    Ok(PairedDataset::read_csv(&read_file(csv)?, sidecar.meta)?)
}

fn data_rng(cfg: &RunConfig) -> RngState {
    RngState::with_stream(cfg.seed, DATA_STREAM)
}

/// Loads `path` or regenerates the configured dataset, then checks its shape.
fn dataset_for(cfg: &RunConfig, path: Option<&Path>) -> CliResult<PairedDataset> {
    let ds = match path {
        Some(p) => load_dataset(p)?,
        None => build_dataset(
            &cfg.system_model()?,
            &cfg.observer()?,
            &cfg.data.spec(),
            &mut data_rng(cfg),
        )?,
    };
    let nz = cfg.observer()?.nz();
    if ds.nz() != nz {
        return Err(CliError::Config(format!(
            "dataset has n_z = {} but the observer config has n_z = {nz}",
            ds.nz()
        )));
    }
    let n = cfg.system_model()?.state_dim();
    if ds.state_dim() != n {
        return Err(CliError::Config(format!(
            "dataset has {} states but system `{}` has {n}",
            ds.state_dim(),
            cfg.system
        )));
    }
    Ok(ds)
}

pub fn load_model(path: &Path) -> CliResult<LipNetParams> {
    LipNetParams::from_json(&read_file(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn check_model(cfg: &RunConfig, model: &LipNetParams) -> CliResult<()> {
    let nz = cfg.observer()?.nz();
    let n = cfg.system_model()?.state_dim();
    if model.input_dim() != nz || model.output_dim() != n {
        return Err(CliError::Config(format!(
            "model maps {} -> {} but the config needs n_z = {nz} -> n = {n}",
            model.input_dim(),
            model.output_dim()
        )));
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let (ds, run) = build_dataset_with_run(
        &cfg.system_model()?,
        &cfg.observer()?,
        &cfg.data.spec(),
        &mut data_rng(cfg),
    )?;
    let out = &cfg.output_dir;
    write_with(&out.join("trajectory.csv"), |w| run.trajectory.write_csv(w))?;
    let csv = out.join("dataset.csv");
    write_with(&csv, |w| ds.write_csv(w))?;
    write_json(
        &sidecar_path(&csv),
        &DatasetSidecar {
            meta: ds.meta.clone(),
            records: ds.len(),
            config: cfg.clone(),
        },
    )?;
    let (t0, t1) = (ds.records[0].t, ds.records[ds.len() - 1].t);
    println!(
        "dataset: m = {}, t in [{t0:.2}, {t1:.2}] (window ({}, {}]), sigma = {}, seed = {}",
        ds.len(),
        cfg.data.t_burn,
        cfg.data.t_end,
        cfg.data.sigma,
        cfg.seed
    );
    println!("wrote {}", csv.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    param_count: usize,
    gamma: f64,
    widths: Vec<usize>,
    epochs: usize,
    n_train: usize,
    n_val: usize,
    initial_train_loss: f64,
    train_loss: f64,
    val_loss: f64,
    emp_lipschitz: f64,
    certified_bound: f64,
    dataset: &'a DatasetMeta,
    config: &'a RunConfig,
}

pub fn train_cmd(cfg: &RunConfig, dataset: Option<&Path>) -> CliResult<()> {
    let ds = dataset_for(cfg, dataset)?;
    let (params, history) = train(&ds, &cfg.train)?;
    let (train_set, val_set) = split_for_config(&ds, &cfg.train)?;
    let zs: Vec<Vec<f64>> = train_set.records.iter().map(|r| r.z.clone()).collect();
    let emp = network_lipschitz(
        &params,
        &zs,
        cfg.analysis.lipschitz_probes,
        &mut RngState::with_stream(cfg.seed, PROBE_STREAM),
    )?;
    let report = TrainReport {
        param_count: params.param_count(),
        gamma: params.gamma,
        widths: params.widths(),
        epochs: cfg.train.epochs,
        n_train: train_set.len(),
        n_val: val_set.len(),
        initial_train_loss: history.initial_train_loss,
        train_loss: history.final_train_loss(),
        val_loss: history.val_loss,
        emp_lipschitz: emp,
        certified_bound: PreparedNet::new(&params)?.certified_bound()?,
        dataset: &ds.meta,
        config: cfg,
    };
    let out = &cfg.output_dir;
    let mut model = params.to_json()?;
    model.push('\n');
    write_file(&out.join("model.json"), model.as_bytes())?;
    write_with(&out.join("history.csv"), |w| history.write_csv(w))?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "trained {} parameters (gamma = {}): train {:.6}, val {:.6}, empirical L_S {:.4}, {:.1} s",
        report.param_count,
        report.gamma,
        report.train_loss,
        report.val_loss,
        emp,
        history.wall_time_secs
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepSidecar<'a> {
    train_rows: usize,
    eval_rows: usize,
    failures: Vec<String>,
    config: &'a RunConfig,
}

fn gamma_trend_csv(table: &SweepTable) -> String {
    let mut s = String::from("gamma,log10_gamma,sigma_train,train_loss,val_loss,emp_lipschitz\n");
    for r in table.train_rows() {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_f64(r.gamma),
            fmt_f64(r.gamma.log10()),
            fmt_f64(r.sigma_train),
            fmt_f64(r.train_loss.unwrap_or(f64::NAN)),
            fmt_f64(r.val_loss),
            fmt_f64(r.emp_lipschitz)
        ));
    }
    s
}

fn eval_trend_csv(table: &SweepTable) -> String {
    let mut s = String::from("gamma,log10_gamma,sigma_eval,loss\n");
    for r in &table.eval_rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(r.gamma),
            fmt_f64(r.gamma.log10()),
            fmt_f64(r.sigma_eval.unwrap_or(f64::NAN)),
            fmt_f64(r.val_loss)
        ));
    }
    s
}

fn sweep_svgs(cfg: &RunConfig, table: &SweepTable) -> CliResult<()> {
    let mut loss = Vec::new();
    let mut lip = Vec::new();
    for &s in &cfg.analysis.sigmas_train {
        let rows: Vec<_> = table.train_rows().filter(|r| r.sigma_train == s).collect();
        let mut train = Series::new(
            format!("train s={s}"),
            rows.iter()
                .map(|r| (r.gamma, r.train_loss.unwrap_or(f64::NAN)))
                .collect(),
        );
        train.dashed = true;
        loss.push(train);
        loss.push(Series::new(
            format!("val s={s}"),
            rows.iter().map(|r| (r.gamma, r.val_loss)).collect(),
        ));
        lip.push(Series::new(
            format!("s={s}"),
            rows.iter().map(|r| (r.gamma, r.emp_lipschitz)).collect(),
        ));
    }
    let out = &cfg.output_dir;
    let plot = |title, y_label| Plot {
        title,
        x_label: "gamma",
        y_label,
        log_x: true,
        log_y: true,
    };
    write_file(
        &out.join("loss_vs_gamma.svg"),
        render(&plot("Loss vs Lipschitz bound", "MSE"), &loss).as_bytes(),
    )?;
    write_file(
        &out.join("lipschitz_vs_gamma.svg"),
        render(&plot("Empirical Lipschitz value vs bound", "L_S"), &lip).as_bytes(),
    )?;
    let eval: Vec<Series> = cfg
        .analysis
        .sigmas_eval
        .iter()
        .map(|&s| {
            Series::new(
                format!("s={s}"),
                table
                    .eval_rows
                    .iter()
                    .filter(|r| r.sigma_eval == Some(s))
                    .map(|r| (r.gamma, r.val_loss))
                    .collect(),
            )
        })
        .collect();
    write_file(
        &out.join("eval_loss_vs_gamma.svg"),
        render(
            &plot("Noiselessly trained observers under noise", "MSE"),
            &eval,
        )
        .as_bytes(),
    )
}

fn cell_name(gamma: f64, sigma: f64) -> String {
    format!("model_gamma{gamma}_sigma{sigma}.json")
}

pub fn sweep(cfg: &RunConfig, svg: bool) -> CliResult<()> {
    let a = &cfg.analysis;
    let spec = SweepSpec {
        gammas: a.gammas.clone(),
        sigmas_train: a.sigmas_train.clone(),
        sigmas_eval: a.sigmas_eval.clone(),
        data: cfg.data.spec(),
        train: cfg.train.clone(),
        seed: cfg.seed,
        lipschitz_probes: a.lipschitz_probes,
        parallel: a.parallel,
    };
    let table = run_gamma_sweep(&cfg.system_model()?, &cfg.observer()?, &spec)?;
    let out = &cfg.output_dir;
    write_with(&out.join("sweep.csv"), |w| table.write_train_csv(w))?;
    write_with(&out.join("sweep_eval.csv"), |w| table.write_eval_csv(w))?;
    write_file(
        &out.join("gamma_trend.csv"),
        gamma_trend_csv(&table).as_bytes(),
    )?;
    write_file(
        &out.join("eval_trend.csv"),
        eval_trend_csv(&table).as_bytes(),
    )?;
    for cell in &table.cells {
        if let Some((params, _)) = &cell.model {
            let mut text = params.to_json()?;
            text.push('\n');
            write_file(
                &out.join("cells")
                    .join(cell_name(cell.row.gamma, cell.row.sigma_train)),
                text.as_bytes(),
            )?;
        }
    }
    write_json(
        &out.join("sweep.json"),
        &SweepSidecar {
            train_rows: table.cells.len(),
            eval_rows: table.eval_rows.len(),
            failures: table.failures.iter().map(|e| e.to_string()).collect(),
            config: cfg,
        },
    )?;
    if svg {
        sweep_svgs(cfg, &table)?;
    }
    println!(
        "sweep: {} training rows, {} evaluation rows written to {}",
        table.cells.len(),
        table.eval_rows.len(),
        out.display()
    );
    match table.first_error() {
        Some(e) => {
            let err = CliError::from(e.duplicate());
            eprintln!("{} of the cells failed; first: {e}", table.failures.len());
            Err(err)
        }
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct ObserveSidecar<'a> {
    model: String,
    sigma_eval: f64,
    t_start: f64,
    rows: usize,
    mse: f64,
    config: &'a RunConfig,
}

/// True states and estimates over the evaluation episode.
pub struct Episode {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub estimates: Vec<Vec<f64>>,
}

impl Episode {
    pub fn mse(&self) -> f64 {
        let total: f64 = self
            .states
            .iter()
            .zip(&self.estimates)
            .map(|(x, e)| x.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        total / self.states.len() as f64
    }
}

pub fn run_episode(cfg: &RunConfig, model: &LipNetParams) -> CliResult<Episode> {
    check_model(cfg, model)?;
    let obs = cfg.observer()?;
    let t_start = cfg.observe.t_start.unwrap_or(cfg.data.t_end);
    let run = observe_run(
        &cfg.system_model()?,
        &obs,
        &cfg.data.x0,
        cfg.observe.sigma_eval,
        t_start + cfg.observe.horizon,
        &mut RngState::with_stream(cfg.seed, OBSERVE_STREAM),
    )?;
    let start = grid_steps(obs.dt(), t_start);
    let tr = &run.trajectory;
    let estimates = estimate_states(model, &run.z[start..])?;
    Ok(Episode {
        times: tr.times[start..]
            .iter()
            .map(|t| t - tr.times[start])
            .collect(),
        states: tr.states[start..].to_vec(),
        estimates,
    })
}

pub fn observe(cfg: &RunConfig, model_path: &Path, svg: bool) -> CliResult<()> {
    let model = load_model(model_path)?;
    let ep = run_episode(cfg, &model)?;
    let n = ep.states[0].len();
    let mut csv = String::from("t");
    for i in 1..=n {
        csv.push_str(&format!(",x{i}"));
    }
    for i in 1..=n {
        csv.push_str(&format!(",xhat{i}"));
    }
    csv.push('\n');
    for k in 0..ep.times.len() {
        let fields: Vec<String> = std::iter::once(ep.times[k])
            .chain(ep.states[k].iter().copied())
            .chain(ep.estimates[k].iter().copied())
            .map(fmt_f64)
            .collect();
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    let out = &cfg.output_dir;
    write_file(&out.join("estimates.csv"), csv.as_bytes())?;
    let mse = ep.mse();
    write_json(
        &out.join("estimates.json"),
        &ObserveSidecar {
            model: model_path.display().to_string(),
            sigma_eval: cfg.observe.sigma_eval,
            t_start: cfg.observe.t_start.unwrap_or(cfg.data.t_end),
            rows: ep.times.len(),
            mse,
            config: cfg,
        },
    )?;
    if svg {
        for i in 0..n {
            let series = vec![
                Series::new(
                    "true",
                    ep.times
                        .iter()
                        .zip(&ep.states)
                        .map(|(t, x)| (*t, x[i]))
                        .collect(),
                ),
                Series::new(
                    "estimate",
                    ep.times
                        .iter()
                        .zip(&ep.estimates)
                        .map(|(t, x)| (*t, x[i]))
                        .collect(),
                ),
            ];
            let title = format!("x{} at sigma = {}", i + 1, cfg.observe.sigma_eval);
            let plot = Plot {
                title: &title,
                x_label: "t",
                y_label: "state",
                log_x: false,
                log_y: false,
            };
            write_file(
                &out.join(format!("estimate_x{}.svg", i + 1)),
                render(&plot, &series).as_bytes(),
            )?;
        }
    }
    println!(
        "observed {} steps at sigma = {}: tracking MSE {mse:.6}",
        ep.times.len(),
        cfg.observe.sigma_eval
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct InputSources {
    pub l_s: String,
    pub l_t: String,
    pub epsilon: String,
}

#[derive(Serialize, Deserialize)]
pub struct BoundFile {
    #[serde(flatten)]
    pub report: BoundReport,
    pub sources: InputSources,
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    #[serde(flatten)]
    file: &'a BoundFile,
    config: &'a RunConfig,
}

fn source(overridden: bool) -> String {
    if overridden { "override" } else { "estimated" }.to_string()
}

pub fn compute_bound(
    cfg: &RunConfig,
    model: &LipNetParams,
    dataset: Option<&Path>,
) -> CliResult<BoundFile> {
    check_model(cfg, model)?;
    let ds = dataset_for(cfg, dataset)?;
    if ds.meta.sigma != cfg.data.sigma {
        return Err(CliError::Config(format!(
            "dataset was generated with sigma = {} but the requested sigma is {}",
            ds.meta.sigma, cfg.data.sigma
        )));
    }
    let noiseless = if ds.meta.sigma == 0.0 {
        ds.clone()
    } else {
        let meta = DatasetMeta {
            sigma: 0.0,
            ..ds.meta.clone()
        };
        rebuild_dataset(&cfg.system_model()?, &meta)?
    };
    let (train_set, _) = split_for_config(&ds, &cfg.train)?;
    let a = &cfg.analysis;
    let l_s = match a.l_s {
        Some(v) => v,
        None => {
            let zs: Vec<Vec<f64>> = train_set.records.iter().map(|r| r.z.clone()).collect();
            network_lipschitz(
                model,
                &zs,
                a.lipschitz_probes,
                &mut RngState::with_stream(cfg.seed, PROBE_STREAM),
            )?
        }
    };
    let l_t = match a.l_t {
        Some(v) => v,
        None => estimate_immersion_lipschitz(&noiseless)?,
    };
    let obs = cfg.observer()?;
    let inputs = BoundInputs {
        h: h2_norm(obs.a(), obs.b())?,
        sigma: cfg.data.sigma,
        alpha: a.alpha,
        epsilon: a.epsilon.unwrap_or_else(|| transient_bound(&noiseless)),
        d: essential_state_bound(&noiseless),
        m: train_set.len(),
        l_s,
        l_t,
        r_hat: mse(model, &train_set)?,
    };
    Ok(BoundFile {
        report: generalization_bound(&inputs)?,
        sources: InputSources {
            l_s: source(a.l_s.is_some()),
            l_t: source(a.l_t.is_some()),
            epsilon: source(a.epsilon.is_some()),
        },
    })
}

pub fn bound(cfg: &RunConfig, model_path: &Path, dataset: Option<&Path>) -> CliResult<()> {
    let model = load_model(model_path)?;
    let file = compute_bound(cfg, &model, dataset)?;
    write_json(
        &cfg.output_dir.join("bound.json"),
        &BoundOutput {
            file: &file,
            config: cfg,
        },
    )?;
    let r = &file.report;
    println!(
        "bound {:.6} = R_hat {:.6} + {:.4} x Delta {:.6} (confidence {})",
        r.bound, r.inputs.r_hat, r.amplification, r.delta, r.confidence
    );
    Ok(())
}
