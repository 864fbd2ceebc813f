//! Autonomous plants `ẋ = f(x)`, `y = h(x)` and fixed-step integration.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::numcore::RngState;

pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type OutputMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Continuous-time autonomous plant with a scalar output.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    state_dim: usize,
    rhs: VectorField,
    output: OutputMap,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        rhs: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        output: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SystemModel {
            name: name.into(),
            state_dim,
            rhs: Arc::new(rhs),
            output: Arc::new(output),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        (self.rhs)(x)
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        (self.output)(x)
    }
}

/// The scaled Lorenz system measured through its second coordinate.
pub fn lorenz_system() -> SystemModel {
    SystemModel::new(
        "lorenz",
        3,
        |x| {
            vec![
                10.0 * (x[1] - x[0]),
                x[0] * (28.0 - 10.0 * x[2]) - x[1],
                10.0 * x[0] * x[1] - (8.0 / 3.0) * x[2],
            ]
        },
        |x| x[1],
    )
}

/// Looks up a built-in system by name.
pub fn system_by_name(name: &str) -> Result<SystemModel> {
    match name {
        "lorenz" => Ok(lorenz_system()),
        other => Err(Error::invalid(format!("unknown system '{other}'"))),
    }
}

/// One classical Runge-Kutta step of `ẋ = f(x)`.
pub(crate) fn rk4(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let shifted = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, k)| b + h * k).collect()
    };
    let k1 = f(x);
    let k2 = f(&shifted(x, &k1, 0.5 * dt));
    let k3 = f(&shifted(x, &k2, 0.5 * dt));
    let k4 = f(&shifted(x, &k3, dt));
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

pub fn rk4_step(sys: &SystemModel, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if x.len() != sys.state_dim {
        return Err(Error::DimensionMismatch {
            context: "rk4_step state",
            expected: sys.state_dim,
            actual: x.len(),
        });
    }
    let next = rk4(|s| sys.rhs(s), x, dt);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("integrated state"));
    }
    Ok(next)
}

/// Uniform-grid solution samples with outputs at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,x1,…,xn,y`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("y".into());
        writeln!(w, "{}", header.join(","))?;
        for ((t, x), y) in self.times.iter().zip(&self.states).zip(&self.outputs) {
            let mut row = vec![fmt_f64(*t)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(*y));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Number of grid steps covering `[0, t_end]` at spacing `dt`.
pub fn grid_steps(dt: f64, t_end: f64) -> usize {
    (t_end / dt).round() as usize
}

pub fn simulate(sys: &SystemModel, x0: &[f64], dt: f64, t_end: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::invalid(format!(
            "simulate requires dt > 0 and t_end > 0 (dt = {dt}, t_end = {t_end})"
        )));
    }
    if x0.len() != sys.state_dim {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: sys.state_dim,
            actual: x0.len(),
        });
    }
    let steps = grid_steps(dt, t_end);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    for k in 0..=steps {
        if k > 0 {
            x = rk4_step(sys, &x, dt).map_err(|_| Error::Divergence {
                time: k as f64 * dt,
            })?;
        }
        times.push(k as f64 * dt);
        outputs.push(sys.output(&x));
        states.push(x.clone());
    }
    Ok(Trajectory {
        dt,
        times,
        states,
        outputs,
    })
}

/// `y(t_k) + σ·ξ_k` with `ξ_k` iid standard normal.
///
/// The draws are consumed even for `sigma = 0`, so downstream use of `rng`
/// does not depend on the noise level.
pub fn noisy_outputs(traj: &Trajectory, sigma: f64, rng: &mut RngState) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "noise level must be >= 0, got {sigma}"
        )));
    }
    let noise = rng.gaussian(traj.outputs.len());
    Ok(traj
        .outputs
        .iter()
        .zip(noise)
        .map(|(y, xi)| if sigma == 0.0 { *y } else { y + sigma * xi })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> SystemModel {
        SystemModel::new("decay", 1, |x| vec![-x[0]], |x| x[0])
    }

    #[test]
    fn lorenz_field_values() {
        let sys = lorenz_system();
        assert_eq!(sys.rhs(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        let f = sys.rhs(&[1.0, 1.0, 1.0]);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 17.0);
        assert!((f[2] - 22.0 / 3.0).abs() < 1e-15);
        assert_eq!(sys.output(&[5.0, -2.0, 7.0]), -2.0);
    }

    #[test]
    fn rk4_zero_field_and_decay() {
        let zero = SystemModel::new("zero", 2, |_| vec![0.0, 0.0], |x| x[0]);
        assert_eq!(rk4_step(&zero, &[1.5, -2.0], 0.1).unwrap(), vec![1.5, -2.0]);
        let x = rk4_step(&decay(), &[1.0], 0.01).unwrap()[0];
        assert!((x - 0.990_049_833_749).abs() < 1e-12);
        assert!((x - (-0.01_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rk4_rejects_bad_input() {
        assert!(rk4_step(&decay(), &[1.0], 0.0).is_err());
        assert!(rk4_step(&decay(), &[1.0, 2.0], 0.1).is_err());
        let blowup = SystemModel::new("blowup", 1, |x| vec![x[0] * x[0] * 1e300], |x| x[0]);
        assert!(matches!(
            rk4_step(&blowup, &[1e10], 1.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn rk4_order() {
        let err = |dt: f64| {
            let traj = simulate(&decay(), &[1.0], dt, 1.0).unwrap();
            (traj.states.last().unwrap()[0] - (-1.0_f64).exp()).abs()
        };
        let order = (err(0.1) / err(0.05)).log2();
        assert!(order >= 3.9, "observed order {order}");
    }

    #[test]
    fn simulate_grid_and_closed_form() {
        let traj = simulate(&decay(), &[1.0], 0.01, 0.1).unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(traj.times[0], 0.0);
        let traj = simulate(&decay(), &[1.0], 0.01, 5.0).unwrap();
        assert!((traj.states.last().unwrap()[0] - (-5.0_f64).exp()).abs() < 1e-9);
        assert_eq!(
            traj.outputs,
            traj.states.iter().map(|x| x[0]).collect::<Vec<_>>()
        );
    }

    #[test]
    fn simulate_reports_divergence_time() {
        let blowup = SystemModel::new("blowup", 1, |x| vec![x[0] * x[0]], |x| x[0]);
        match simulate(&blowup, &[1.0], 0.1, 5.0) {
            Err(Error::Divergence { time }) => assert!(time > 0.0 && time < 5.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn lorenz_first_step_and_attractor() {
        let sys = lorenz_system();
        let x = rk4_step(&sys, &[1.0, 1.0, 1.0], 0.01).unwrap();
        assert!(x.iter().all(|v| v.is_finite() && v.abs() <= 50.0));

        let traj = simulate(&sys, &[1.0, 1.0, 1.0], 0.01, 500.0).unwrap();
        assert_eq!(traj.len(), 50_001);
        for (t, x) in traj.times.iter().zip(&traj.states) {
            assert!(x.iter().all(|v| v.is_finite()));
            if *t >= 1.0 {
                assert!(x.iter().all(|v| v.abs() <= 100.0));
            }
        }
        let again = simulate(&sys, &[1.0, 1.0, 1.0], 0.01, 500.0).unwrap();
        assert_eq!(traj, again);
    }

    #[test]
    fn noise_contract() {
        let traj = simulate(&decay(), &[1.0], 0.01, 1.0).unwrap();
        let clean = noisy_outputs(&traj, 0.0, &mut RngState::new(1)).unwrap();
        assert_eq!(clean, traj.outputs);
        let a = noisy_outputs(&traj, 0.5, &mut RngState::new(1)).unwrap();
        let b = noisy_outputs(&traj, 0.5, &mut RngState::new(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, clean);
        assert!(noisy_outputs(&traj, -1.0, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn noise_variance() {
        let traj = Trajectory {
            dt: 1.0,
            times: (0..100_000).map(f64::from).collect(),
            states: vec![vec![0.0]; 100_000],
            outputs: vec![0.0; 100_000],
        };
        let y = noisy_outputs(&traj, 1.0, &mut RngState::new(77)).unwrap();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn csv_header() {
        let traj = simulate(&lorenz_system(), &[1.0, 1.0, 1.0], 0.01, 0.02).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,x3,y"));
        assert_eq!(lines.count(), 3);
    }
}
