use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use kkl::dynamics::{system_by_name, SystemModel};
use kkl::numcore::Matrix;
use kkl::observer::{DataSpec, ObserverLti};
use kkl::training::TrainConfig;

use crate::error::CliError;

/// Observer dynamics matrix, given by its diagonal or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AMatrix {
    Diag(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverSection {
    pub a: AMatrix,
    pub b: Vec<f64>,
    /// Defaults to the origin.
    pub z0: Option<Vec<f64>>,
    pub dt: f64,
}

impl Default for ObserverSection {
    fn default() -> Self {
        ObserverSection {
            a: AMatrix::Diag(vec![-8.0, -4.0, -2.0, -1.0]),
            b: vec![1.0; 4],
            z0: None,
            dt: 0.01,
        }
    }
}

impl ObserverSection {
    pub fn build(&self) -> kkl::Result<ObserverLti> {
        let a = match &self.a {
            AMatrix::Diag(d) => Matrix::diag(d),
            AMatrix::Dense(rows) => Matrix::from_rows(rows)?,
        };
        let z0 = self.z0.clone().unwrap_or_else(|| vec![0.0; a.rows()]);
        ObserverLti::new(a, Matrix::column(&self.b), z0, self.dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub m: usize,
    pub t_burn: f64,
    pub t_end: f64,
    pub sigma: f64,
    pub x0: Vec<f64>,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DataSpec::default();
        DataSection {
            m: d.m,
            t_burn: d.t_burn,
            t_end: d.t_end,
            sigma: d.sigma,
            x0: d.x0,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> DataSpec {
        DataSpec {
            m: self.m,
            t_burn: self.t_burn,
            t_end: self.t_end,
            sigma: self.sigma,
            x0: self.x0.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub alpha: f64,
    pub gammas: Vec<f64>,
    pub sigmas_train: Vec<f64>,
    pub sigmas_eval: Vec<f64>,
    /// Probe pairs for empirical network Lipschitz values.
    pub lipschitz_probes: usize,
    /// Overrides for the bound inputs; estimated from data when absent.
    pub epsilon: Option<f64>,
    pub l_s: Option<f64>,
    pub l_t: Option<f64>,
    pub parallel: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            alpha: 0.05,
            gammas: vec![1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0],
            sigmas_train: vec![0.0, 1.0, 5.0, 10.0],
            sigmas_eval: vec![0.1, 0.3, 1.0, 3.0],
            lipschitz_probes: 10_000,
            epsilon: None,
            l_s: None,
            l_t: None,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserveSection {
    /// Start of the evaluation episode; defaults to `data.t_end`.
    pub t_start: Option<f64>,
    pub horizon: f64,
    pub sigma_eval: f64,
}

impl Default for ObserveSection {
    fn default() -> Self {
        ObserveSection {
            t_start: None,
            horizon: 10.0,
            sigma_eval: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: String,
    pub observer: ObserverSection,
    pub data: DataSection,
    /// `train.seed` is replaced by the top-level `seed`.
    pub train: TrainConfig,
    pub analysis: AnalysisSection,
    pub observe: ObserveSection,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: "lorenz".into(),
            observer: ObserverSection::default(),
            data: DataSection::default(),
            train: TrainConfig::default(),
            analysis: AnalysisSection::default(),
            observe: ObserveSection::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses a config document, applying `path=value` overrides first.
    ///
    /// Override values are read as JSON, falling back to a plain string.
    pub fn resolve(doc: Option<&str>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut root = match doc {
            Some(text) => serde_json::from_str::<Value>(text)
                .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?,
            None => Value::Object(Default::default()),
        };
        for (path, raw) in overrides {
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut root, path, value)?;
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(root)
            .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let sys = self.system_model()?;
        self.observer()
            .map_err(|e| CliError::Config(format!("observer: {e}")))?;
        if self.data.x0.len() != sys.state_dim() {
            return bad(format!(
                "data.x0 has {} entries but system `{}` has {} states",
                self.data.x0.len(),
                self.system,
                sys.state_dim()
            ));
        }
        if !(self.data.sigma >= 0.0 && self.data.sigma.is_finite()) {
            return bad(format!(
                "data.sigma must be finite and >= 0, got {}",
                self.data.sigma
            ));
        }
        if self.data.t_burn < 0.0 || self.data.t_burn >= self.data.t_end {
            return bad("need 0 <= data.t_burn < data.t_end".into());
        }
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        if !(self.train.gamma > 0.0) {
            return bad(format!("train.gamma must be > 0, got {}", self.train.gamma));
        }
        let a = &self.analysis;
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return bad(format!(
                "analysis.alpha must lie in (0, 1), got {}",
                a.alpha
            ));
        }
        if a.gammas.iter().any(|g| !(*g > 0.0)) {
            return bad("analysis.gammas must be positive".into());
        }
        if a.sigmas_train
            .iter()
            .chain(&a.sigmas_eval)
            .any(|s| !(*s >= 0.0))
        {
            return bad("analysis sigmas must be >= 0".into());
        }
        if a.lipschitz_probes == 0 {
            return bad("analysis.lipschitz_probes must be >= 1".into());
        }
        if !(self.observe.horizon > 0.0) || !(self.observe.sigma_eval >= 0.0) {
            return bad("observe.horizon must be > 0 and observe.sigma_eval >= 0".into());
        }
        if let Some(t) = self.observe.t_start {
            if !(t >= 0.0) {
                return bad("observe.t_start must be >= 0".into());
            }
        }
        Ok(())
    }

    pub fn system_model(&self) -> Result<SystemModel, CliError> {
        system_by_name(&self.system).map_err(|e| CliError::Config(format!("system: {e}")))
    }

    pub fn observer(&self) -> kkl::Result<ObserverLti> {
        self.observer.build()
    }

    #[cfg(test)]
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets a dotted path such as `train.gamma`, creating objects on the way.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override path `{path}`")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!(
                "override `{path}`: `{key}` is not inside an object"
            ))
        })?;
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| {
        CliError::Config(format!(
            "override `{path}` does not address an object field"
        ))
    })?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
