//! Flat key-value run configuration (TOML syntax) and flag overrides.
//!
//! Every key is optional in the file. [`RunConfig::resolve`] fills in the
//! defaults, so the resolved form printed by `--dump-config` names every
//! setting and parses back to itself.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lrxy_core::metrics::DEFAULT_HORIZON_PER_SITE;
use lrxy_core::sweep::{Axis, AxisName, ExportFormat, OutputMetric, SweepGrid};
use lrxy_core::{MetricsConfig, ModelParams, StringConvention, CLASSICAL_LIMIT};

/// An axis is either an explicit list or an inclusive arithmetic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            AxisSpec::List(ref v) => Ok(v.clone()),
            AxisSpec::Range { start, stop, step } => {
                if !(step.is_finite() && step > 0.0 && start.is_finite() && stop.is_finite()) {
                    bail!("range needs finite start/stop and a positive step");
                }
                let count = ((stop - start) / step * (1.0 + 1e-12)).floor();
                if count < 0.0 {
                    bail!("range stop {stop} lies below start {start}");
                }
                // multiply rather than accumulate so values land exactly on the grid
                Ok((0..=count as usize)
                    .map(|k| start + k as f64 * step)
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // model
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_sites: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coordination: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub falloff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anisotropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub string_convention: Option<StringConvention>,

    // metrics
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,

    // output and execution
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<ExportFormat>,

    // sweep
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<AxisName>>,
    #[serde(rename = "axis_N", skip_serializing_if = "Option::is_none")]
    pub axis_n: Option<AxisSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_z: Option<AxisSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_alpha: Option<AxisSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_lambda: Option<AxisSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_g: Option<AxisSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<OutputMetric>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_time_budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,

    // fit
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fix_a: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,

    // oracle-check
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Values set in `other` win.
    pub fn merge(&mut self, other: &RunConfig) {
        overlay!(self, other;
            n_sites, coordination, falloff, anisotropy, field, coupling_scale, string_convention,
            epsilon, t_max, dt, out, parallelism, format,
            axes, axis_n, axis_z, axis_alpha, axis_lambda, axis_g, outputs, cell_time_budget, cache_dir,
            input, fix_a, target, samples, seed, tolerance,
        );
    }

    /// Fills in every default that does not depend on the subcommand.
    pub fn resolve(mut self) -> Self {
        let defaults = MetricsConfig::default();
        self.n_sites.get_or_insert(25);
        self.coordination.get_or_insert(1);
        self.falloff.get_or_insert(2.3);
        self.anisotropy.get_or_insert(0.5);
        self.field.get_or_insert(0.7);
        self.coupling_scale.get_or_insert(1.0);
        self.string_convention
            .get_or_insert(StringConvention::default());
        self.epsilon.get_or_insert(defaults.epsilon);
        self.dt.get_or_insert(defaults.dt);
        self
    }

    fn unchecked_model(&self) -> ModelParams {
        ModelParams {
            n_sites: self.n_sites.unwrap_or(25),
            coordination: self.coordination.unwrap_or(1),
            falloff: self.falloff.unwrap_or(2.3),
            anisotropy: self.anisotropy.unwrap_or(0.5),
            field: self.field.unwrap_or(0.7),
            coupling_scale: self.coupling_scale.unwrap_or(1.0),
            string_convention: self.string_convention.unwrap_or_default(),
        }
    }

    pub fn model(&self) -> Result<ModelParams> {
        let params = self.unchecked_model();
        params.validate()?;
        Ok(params)
    }

    pub fn metrics(&self) -> Result<MetricsConfig> {
        let defaults = MetricsConfig::default();
        let config = MetricsConfig {
            epsilon: self.epsilon.unwrap_or(defaults.epsilon),
            t_max: self.t_max,
            dt: self.dt.unwrap_or(defaults.dt),
            classical_limit: CLASSICAL_LIMIT,
        };
        config.validate()?;
        Ok(config)
    }

    /// Trace length: `t_max` if set, else the default metrics horizon.
    pub fn trace_horizon(&self, params: &ModelParams) -> f64 {
        self.t_max
            .unwrap_or(DEFAULT_HORIZON_PER_SITE * params.n_sites as f64 / params.coupling_scale)
    }

    fn axis_spec(&self, name: AxisName) -> Option<&AxisSpec> {
        match name {
            AxisName::N => self.axis_n.as_ref(),
            AxisName::Z => self.axis_z.as_ref(),
            AxisName::Alpha => self.axis_alpha.as_ref(),
            AxisName::Lambda => self.axis_lambda.as_ref(),
            AxisName::G => self.axis_g.as_ref(),
        }
    }

    /// Axes listed in `axes`, in that order, with values from `axis_<name>`.
    pub fn sweep_grid(&self) -> Result<SweepGrid> {
        let names = match &self.axes {
            Some(names) if !names.is_empty() => names.clone(),
            _ => bail!("sweep needs `axes`, e.g. axes = [\"z\", \"g\"]"),
        };
        for name in AxisName::ALL {
            if self.axis_spec(name).is_some() && !names.contains(&name) {
                bail!("`axis_{name}` is set but `{name}` is not listed in `axes`");
            }
        }
        let mut axes = Vec::with_capacity(names.len());
        for name in names {
            let spec = self.axis_spec(name).with_context(|| {
                format!("axis `{name}` is listed in `axes` but `axis_{name}` is missing")
            })?;
            let values = spec.values().with_context(|| format!("in `axis_{name}`"))?;
            axes.push(Axis::new(name, values));
        }
        // The fixed instance only has to be valid once the axes are applied,
        // so it is checked cell by cell inside the sweep.
        let fixed = self.unchecked_model();
        let mut grid = SweepGrid::new(axes, fixed, self.metrics()?);
        if let Some(outputs) = &self.outputs {
            grid.outputs = outputs.clone();
        }
        grid.cell_time_budget = self.cell_time_budget;
        grid.validate()?;
        Ok(grid)
    }
}
