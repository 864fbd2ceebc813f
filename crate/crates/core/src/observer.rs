//! The KKL observer's linear filter `ż = A·z + B·y` and paired training data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{grid_steps, noisy_outputs, rk4, simulate, SystemModel, Trajectory};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_numeric_csv};
use crate::lipnet::{LipNetParams, PreparedNet};
use crate::numcore::{is_hurwitz, Matrix, RngState};

/// LTI part of the observer, driven by the scalar plant output.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverLti {
    a: Matrix,
    b: Matrix,
    z0: Vec<f64>,
    dt: f64,
}

impl ObserverLti {
    /// Validates dimensions and the Hurwitz property of `a`.
    pub fn new(a: Matrix, b: Matrix, z0: Vec<f64>, dt: f64) -> Result<Self> {
        let nz = a.rows();
        if !a.is_square() || nz == 0 {
            return Err(Error::invalid(format!(
                "observer A must be square and nonempty, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.rows() != nz || b.cols() != 1 {
            return Err(Error::DimensionMismatch {
                context: "observer B rows",
                expected: nz,
                actual: b.rows(),
            });
        }
        if z0.len() != nz {
            return Err(Error::DimensionMismatch {
                context: "observer z0",
                expected: nz,
                actual: z0.len(),
            });
        }
        if !(dt > 0.0) {
            return Err(Error::invalid(format!(
                "observer dt must be positive, got {dt}"
            )));
        }
        if !is_hurwitz(&a) {
            return Err(Error::NotHurwitz(format!("{a:?}")));
        }
        Ok(ObserverLti { a, b, z0, dt })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn z0(&self) -> &[f64] {
        &self.z0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nz(&self) -> usize {
        self.a.rows()
    }

    pub fn with_z0(mut self, z0: Vec<f64>) -> Result<Self> {
        if z0.len() != self.nz() {
            return Err(Error::DimensionMismatch {
                context: "observer z0",
                expected: self.nz(),
                actual: z0.len(),
            });
        }
        self.z0 = z0;
        Ok(self)
    }

    /// One RK4 step of length `dt` with `y` held constant.
    pub fn step(&self, z: &[f64], y: f64, dt: f64) -> Vec<f64> {
        let bcol = self.b.as_slice();
        rk4(
            |s| {
                let mut d = self.a.matvec(s);
                d.iter_mut().zip(bcol).for_each(|(di, bi)| *di += bi * y);
                d
            },
            z,
            dt,
        )
    }
}

/// `A = −diag(8, 4, 2, 1)`, `B = 1`, `z(0) = 0`, `dt = 0.01`.
pub fn default_observer() -> ObserverLti {
    ObserverLti::new(
        Matrix::diag(&[-8.0, -4.0, -2.0, -1.0]),
        Matrix::column(&[1.0; 4]),
        vec![0.0; 4],
        0.01,
    )
    .expect("default observer is valid")
}

/// Integrates the filter with RK4, holding each sample constant over its step.
///
/// Returns `z` at every grid point, starting with `z0`.
pub fn filter_outputs(obs: &ObserverLti, ys: &[f64], dt: f64) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!(
            "filter dt must be positive, got {dt}"
        )));
    }
    let mut z = obs.z0.clone();
    let mut out = Vec::with_capacity(ys.len());
    for (k, &y) in ys.iter().enumerate() {
        out.push(z.clone());
        if k + 1 == ys.len() {
            break;
        }
        z = obs.step(&z, y, dt);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: (k + 1) as f64 * dt,
            });
        }
    }
    Ok(out)
}

/// One sampled instant: time, plant state, observer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    pub t_burn: f64,
    pub t_end: f64,
    pub dt: f64,
    pub m: usize,
    pub x0: Vec<f64>,
    pub observer_a: Vec<Vec<f64>>,
    pub observer_b: Vec<f64>,
    pub observer_z0: Vec<f64>,
}

impl DatasetMeta {
    pub fn observer(&self) -> Result<ObserverLti> {
        ObserverLti::new(
            Matrix::from_rows(&self.observer_a)?,
            Matrix::column(&self.observer_b),
            self.observer_z0.clone(),
            self.dt,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub records: Vec<Record>,
    pub meta: DatasetMeta,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.x.len())
    }

    pub fn nz(&self) -> usize {
        self.records.first().map_or(0, |r| r.z.len())
    }

    /// Copy restricted to the given record indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> PairedDataset {
        PairedDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            meta: DatasetMeta {
                m: indices.len(),
                ..self.meta.clone()
            },
        }
    }

    /// `(z, x)` slices for the network.
    pub fn pairs(&self) -> Vec<(&[f64], &[f64])> {
        self.records
            .iter()
            .map(|r| (r.z.as_slice(), r.x.as_slice()))
            .collect()
    }

    /// CSV with header `t,x1..xn,z1..znz`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.state_dim()).map(|i| format!("x{i}")));
        header.extend((1..=self.nz()).map(|i| format!("z{i}")));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let row: Vec<String> = std::iter::once(r.t)
                .chain(r.x.iter().copied())
                .chain(r.z.iter().copied())
                .map(fmt_f64)
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str, meta: DatasetMeta) -> Result<PairedDataset> {
        let (header, rows) = parse_numeric_csv(text, "dataset CSV")?;
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::Parse {
                what: "dataset CSV",
                detail: "first column must be 't'".into(),
            });
        }
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let nz = header.iter().filter(|h| h.starts_with('z')).count();
        if 1 + n + nz != header.len() {
            return Err(Error::Parse {
                what: "dataset CSV",
                detail: format!("unexpected columns {header:?}"),
            });
        }
        let records: Vec<Record> = rows
            .into_iter()
            .map(|row| Record {
                t: row[0],
                x: row[1..1 + n].to_vec(),
                z: row[1 + n..].to_vec(),
            })
            .collect();
        if records.len() != meta.m {
            return Err(Error::DimensionMismatch {
                context: "dataset record count vs metadata",
                expected: meta.m,
                actual: records.len(),
            });
        }
        Ok(PairedDataset { records, meta })
    }
}

/// Sampling protocol for [`build_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub m: usize,
    pub t_burn: f64,
    pub t_end: f64,
    pub sigma: f64,
    pub x0: Vec<f64>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            m: 2000,
            t_burn: 20.0,
            t_end: 500.0,
            sigma: 0.0,
            x0: vec![1.0, 1.0, 1.0],
        }
    }
}

/// Simulated plant, noisy outputs and filtered observer states on one grid.
#[derive(Debug, Clone)]
pub struct ObservedRun {
    pub trajectory: Trajectory,
    pub measured: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

/// Simulates the plant to `t_end`, corrupts the outputs, and filters them.
pub fn observe_run(
    sys: &SystemModel,
    obs: &ObserverLti,
    x0: &[f64],
    sigma: f64,
    t_end: f64,
    rng: &mut RngState,
) -> Result<ObservedRun> {
    let trajectory = simulate(sys, x0, obs.dt, t_end)?;
    let measured = noisy_outputs(&trajectory, sigma, rng)?;
    let z = filter_outputs(obs, &measured, obs.dt)?;
    Ok(ObservedRun {
        trajectory,
        measured,
        z,
    })
}

/// Builds `m` paired records at distinct grid instants in `(t_burn, t_end]`.
///
/// The RNG first supplies one noise draw per grid point, then the sample
/// indices; records are returned in time order.
pub fn build_dataset(
    sys: &SystemModel,
    obs: &ObserverLti,
    spec: &DataSpec,
    rng: &mut RngState,
) -> Result<PairedDataset> {
    Ok(build_dataset_with_run(sys, obs, spec, rng)?.0)
}

/// [`build_dataset`] that also hands back the underlying run.
pub fn build_dataset_with_run(
    sys: &SystemModel,
    obs: &ObserverLti,
    spec: &DataSpec,
    rng: &mut RngState,
) -> Result<(PairedDataset, ObservedRun)> {
    if !(spec.t_burn >= 0.0 && spec.t_burn < spec.t_end) {
        return Err(Error::invalid(format!(
            "need 0 <= t_burn < t_end (t_burn = {}, t_end = {})",
            spec.t_burn, spec.t_end
        )));
    }
    let dt = obs.dt;
    let steps = grid_steps(dt, spec.t_end);
    let burn_steps = grid_steps(dt, spec.t_burn);
    let available = steps - burn_steps;
    if spec.m > available || spec.m == 0 {
        return Err(Error::InsufficientGrid {
            requested: spec.m,
            available,
        });
    }
    let (seed, stream) = (rng.seed(), rng.stream());
    let run = observe_run(sys, obs, &spec.x0, spec.sigma, spec.t_end, rng)?;
    let mut picks: Vec<usize> = rng
        .sample_indices(available, spec.m)
        .into_iter()
        .map(|i| burn_steps + 1 + i)
        .collect();
    picks.sort_unstable();
    let records = picks
        .iter()
        .map(|&k| Record {
            t: run.trajectory.times[k],
            x: run.trajectory.states[k].clone(),
            z: run.z[k].clone(),
        })
        .collect();
    let meta = DatasetMeta {
        system: sys.name().to_string(),
        sigma: spec.sigma,
        seed,
        stream,
        t_burn: spec.t_burn,
        t_end: spec.t_end,
        dt,
        m: spec.m,
        x0: spec.x0.clone(),
        observer_a: (0..obs.nz()).map(|i| obs.a.row(i).to_vec()).collect(),
        observer_b: obs.b.as_slice().to_vec(),
        observer_z0: obs.z0.clone(),
    };
    Ok((PairedDataset { records, meta }, run))
}

/// Regenerates a dataset from its metadata.
pub fn rebuild_dataset(sys: &SystemModel, meta: &DatasetMeta) -> Result<PairedDataset> {
    let spec = DataSpec {
        m: meta.m,
        t_burn: meta.t_burn,
        t_end: meta.t_end,
        sigma: meta.sigma,
        x0: meta.x0.clone(),
    };
    let mut rng = RngState::with_stream(meta.seed, meta.stream);
    build_dataset(sys, &meta.observer()?, &spec, &mut rng)
}

/// Applies the network to each observer state independently.
pub fn estimate_states(net: &LipNetParams, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let prepared = PreparedNet::new(net)?;
    zs.iter().map(|z| prepared.forward(z)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lorenz_system;
    use crate::numcore::{dist2, norm2};

    #[test]
    fn default_observer_matches_case_study() {
        let obs = default_observer();
        assert_eq!(obs.a().diagonal(), vec![-8.0, -4.0, -2.0, -1.0]);
        assert_eq!(obs.b().as_slice(), &[1.0; 4]);
        assert_eq!(obs.z0(), &[0.0; 4]);
        assert_eq!(obs.dt(), 0.01);
        assert!(is_hurwitz(obs.a()));
    }

    #[test]
    fn constructor_rejects_bad_observers() {
        let b = Matrix::column(&[1.0, 1.0]);
        assert!(
            ObserverLti::new(Matrix::diag(&[-1.0, 0.1]), b.clone(), vec![0.0; 2], 0.01).is_err()
        );
        assert!(
            ObserverLti::new(Matrix::diag(&[-1.0, -2.0]), b.clone(), vec![0.0; 3], 0.01).is_err()
        );
        assert!(ObserverLti::new(Matrix::diag(&[-1.0]), b, vec![0.0], 0.01).is_err());
    }

    #[test]
    fn zero_input_stays_at_rest() {
        let z = filter_outputs(&default_observer(), &[0.0; 50], 0.01).unwrap();
        assert_eq!(z.len(), 50);
        assert!(z.iter().all(|v| v.iter().all(|&c| c == 0.0)));
    }

    #[test]
    fn scalar_step_response() {
        let obs = ObserverLti::new(
            Matrix::diag(&[-1.0]),
            Matrix::column(&[1.0]),
            vec![0.0],
            0.01,
        )
        .unwrap();
        let z = filter_outputs(&obs, &vec![1.0; 1001], 0.01).unwrap();
        let want = 1.0 - (-10.0_f64).exp();
        assert!((z[1000][0] - want).abs() < 1e-4);
    }

    #[test]
    fn filter_contraction() {
        let obs = default_observer();
        let mut rng = RngState::new(4);
        let ys: Vec<f64> = (0..2001).map(|_| rng.normal()).collect();
        let za = filter_outputs(&obs, &ys, 0.01).unwrap();
        let zb = filter_outputs(&obs.clone().with_z0(vec![1.0; 4]).unwrap(), &ys, 0.01).unwrap();
        let gap0 = dist2(&za[0], &zb[0]);
        let gap = dist2(&za[2000], &zb[2000]);
        assert!(gap <= (-20.0_f64).exp() * gap0 * (1.0 + 1e-6));
        // per unit time the gap shrinks by at least e^{-1}
        for k in (100..=2000).step_by(100) {
            let g1 = dist2(&za[k], &zb[k]);
            let g0 = dist2(&za[k - 100], &zb[k - 100]);
            assert!(g1 <= (-1.0_f64).exp() * g0 * (1.0 + 1e-6));
        }
    }

    fn small_spec(m: usize, sigma: f64) -> DataSpec {
        DataSpec {
            m,
            t_burn: 2.0,
            t_end: 5.0,
            sigma,
            x0: vec![1.0, 1.0, 1.0],
        }
    }

    #[test]
    fn dataset_window_and_determinism() {
        let sys = lorenz_system();
        let obs = default_observer();
        let a = build_dataset(&sys, &obs, &small_spec(100, 0.0), &mut RngState::new(3)).unwrap();
        let b = build_dataset(&sys, &obs, &small_spec(100, 0.0), &mut RngState::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.records.iter().all(|r| r.t > 2.0 && r.t <= 5.0 + 1e-12));
        assert!(a.records.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn exhaustive_sampling_covers_window() {
        let sys = lorenz_system();
        let obs = default_observer();
        let ds = build_dataset(&sys, &obs, &small_spec(300, 0.0), &mut RngState::new(9)).unwrap();
        let ks: Vec<usize> = ds
            .records
            .iter()
            .map(|r| (r.t / 0.01).round() as usize)
            .collect();
        assert_eq!(ks, (201..=500).collect::<Vec<_>>());
        assert!(matches!(
            build_dataset(&sys, &obs, &small_spec(301, 0.0), &mut RngState::new(9)),
            Err(Error::InsufficientGrid {
                requested: 301,
                available: 300
            })
        ));
    }

    #[test]
    fn rebuild_reproduces_records() {
        let sys = lorenz_system();
        let obs = default_observer();
        let ds = build_dataset(
            &sys,
            &obs,
            &small_spec(50, 0.5),
            &mut RngState::with_stream(12, 3),
        )
        .unwrap();
        let again = rebuild_dataset(&sys, &ds.meta).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn noise_does_not_change_sampled_instants() {
        let sys = lorenz_system();
        let obs = default_observer();
        let clean = build_dataset(&sys, &obs, &small_spec(40, 0.0), &mut RngState::new(5)).unwrap();
        let noisy = build_dataset(&sys, &obs, &small_spec(40, 2.0), &mut RngState::new(5)).unwrap();
        for (a, b) in clean.records.iter().zip(&noisy.records) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.x, b.x);
            assert_ne!(a.z, b.z);
        }
    }

    #[test]
    fn csv_round_trip() {
        let sys = lorenz_system();
        let ds = build_dataset(
            &sys,
            &default_observer(),
            &small_spec(20, 0.3),
            &mut RngState::new(1),
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2,x3,z1,z2,z3,z4\n"));
        let back = PairedDataset::read_csv(&text, ds.meta.clone()).unwrap();
        assert_eq!(back, ds);
        let mut short_meta = ds.meta.clone();
        short_meta.m = 19;
        assert!(PairedDataset::read_csv(&text, short_meta).is_err());
    }

    #[test]
    fn estimates_from_zero_network() {
        let net = LipNetParams::zeros(&[4, 8, 8, 3], 10.0).unwrap();
        let est = estimate_states(&net, &[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(est, vec![vec![0.0; 3]]);
        assert!(estimate_states(&net, &[vec![1.0; 3]]).is_err());
        assert!(norm2(&est[0]) == 0.0);
    }
}
