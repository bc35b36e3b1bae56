//! Run manifests: sectioned `key = value` text with strict key checking.
//!
//! Unknown sections or keys are errors (anti-typo), every diagnostic
//! carries its 1-based line number, and parsing is total: the result is
//! either a fully-defaulted [`RunManifest`] or an error. Relative paths
//! resolve against the manifest's directory. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::acquisition::{default_band, dispersion_cap_hz, Acquisition, Side};
use crate::error::{MwiError, Result};
use crate::helmholtz::ModelingOptions;
use crate::inversion::{Method, RunConfig, DEFAULT_STEP_FRACTION};
use crate::model::Model;
use crate::regularizer::{RegKind, Regularizer};

/// Parsed and validated run description.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub name: String,
    pub output_dir: PathBuf,
    pub initial_model: PathBuf,
    pub observed_data: PathBuf,
    pub true_model: Option<PathBuf>,

    pub method: Method,
    pub mu: f64,
    pub iterations: usize,
    pub step_frac: f64,
    pub step_length: Option<f64>,
    pub bounds_enabled: bool,
    pub gn_data_hessian: bool,

    pub v_min: f64,
    pub v_max: f64,

    pub reg_kind: RegKind,
    pub reg_weight: f64,
    pub tv_inner_iters: usize,

    pub n_sources: usize,
    pub source_side: Side,
    pub n_receivers: usize,
    pub receiver_side: Side,
    pub peak_hz: f64,
    /// Explicit frequency list; wins over `n_frequencies`.
    pub frequencies: Option<Vec<f64>>,
    pub n_frequencies: usize,

    pub pml_cells: usize,

    pub snapshot_every: usize,
    pub shot_gather_sources: Vec<usize>,

    /// Continuation stages (frequency subsets) and cycle count.
    pub stages: Option<Vec<Vec<f64>>>,
    pub cycles: usize,
}

impl RunManifest {
    pub fn modeling_options(&self) -> ModelingOptions {
        ModelingOptions { pml_cells: self.pml_cells, ..Default::default() }
    }

    pub fn run_config(&self, truth: Option<Model>) -> Result<RunConfig> {
        Ok(RunConfig {
            method: self.method,
            mu: self.mu,
            iterations: self.iterations,
            regularizer: Regularizer::new(self.reg_kind, self.reg_weight, self.tv_inner_iters)?,
            bounds_enabled: self.bounds_enabled,
            gn_data_hessian: self.gn_data_hessian,
            step_frac: self.step_frac,
            step_length: self.step_length,
            truth,
            modeling: self.modeling_options(),
        })
    }

    /// Acquisition for a model, with the default band capped by the
    /// dispersion rule when no explicit frequency list is given.
    pub fn acquisition(&self, model: &Model) -> Result<Acquisition> {
        let freqs = match &self.frequencies {
            Some(f) => f.clone(),
            None => default_band(self.peak_hz, self.n_frequencies, Some(dispersion_cap_hz(model))),
        };
        Acquisition::lines(
            model.nx,
            model.nz,
            self.n_sources,
            self.source_side,
            self.n_receivers,
            self.receiver_side,
            self.peak_hz,
            freqs,
        )
    }

    /// The continuation schedule repeated over its cycles, if configured.
    pub fn schedule(&self) -> Option<Vec<Vec<f64>>> {
        self.stages.as_ref().map(|stages| {
            let mut out = Vec::with_capacity(stages.len() * self.cycles);
            for _ in 0..self.cycles.max(1) {
                out.extend(stages.iter().cloned());
            }
            out
        })
    }
}

struct Entry {
    line: usize,
    value: String,
    consumed: bool,
}

/// Keys collected as `section.key`, each knowing its line.
struct Table {
    entries: BTreeMap<String, Entry>,
}

impl Table {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.consumed = true;
            (e.line, e.value.clone())
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw.parse::<T>().map(Some).map_err(|_| MwiError::Manifest {
                line,
                message: format!("key '{key}': expected {what}, got '{raw}'"),
            }),
        }
    }

    fn parse_or<T: std::str::FromStr>(&mut self, key: &str, what: &str, default: T) -> Result<T> {
        Ok(self.parse(key, what)?.unwrap_or(default))
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<T> {
        self.parse(key, what)?.ok_or_else(|| {
            MwiError::InvalidConfig(format!("manifest is missing required key '{key}' ({what})"))
        })
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some((line, raw)) => match raw.as_str() {
                "on" | "true" | "yes" => Ok(true),
                "off" | "false" | "no" => Ok(false),
                other => Err(MwiError::Manifest {
                    line,
                    message: format!("key '{key}': expected on/off, got '{other}'"),
                }),
            },
        }
    }

    fn float_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| MwiError::Manifest {
                        line,
                        message: format!("key '{key}': '{}' is not a number", tok.trim()),
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    fn usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|_| MwiError::Manifest {
                        line,
                        message: format!("key '{key}': '{}' is not an index", tok.trim()),
                    })
                })
                .collect::<Result<Vec<usize>>>()
                .map(Some),
        }
    }

    /// Stage list: stages separated by `|`, frequencies by `,`.
    fn stage_list(&mut self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => {
                let mut stages = Vec::new();
                for part in raw.split('|') {
                    let stage: Vec<f64> = part
                        .split(',')
                        .map(|tok| {
                            tok.trim().parse::<f64>().map_err(|_| MwiError::Manifest {
                                line,
                                message: format!("key '{key}': '{}' is not a number", tok.trim()),
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    if stage.is_empty() {
                        return Err(MwiError::Manifest {
                            line,
                            message: format!("key '{key}': empty stage"),
                        });
                    }
                    stages.push(stage);
                }
                Ok(Some(stages))
            }
        }
    }

    fn reject_unconsumed(&self) -> Result<()> {
        for (key, e) in &self.entries {
            if !e.consumed {
                return Err(MwiError::Manifest {
                    line: e.line,
                    message: format!("unknown key '{key}'"),
                });
            }
        }
        Ok(())
    }
}

const SECTIONS: &[&str] = &[
    "experiment",
    "paths",
    "run",
    "bounds",
    "reg",
    "acquisition",
    "modeling",
    "output",
    "continuation",
];

fn tokenize(text: &str) -> Result<Table> {
    let mut entries = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(MwiError::Manifest {
                    line: line_no,
                    message: format!("unknown section '[{name}]'"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(MwiError::Manifest {
                line: line_no,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if key.is_empty() || value.is_empty() {
            return Err(MwiError::Manifest {
                line: line_no,
                message: "empty key or value".into(),
            });
        }
        let Some(sec) = &section else {
            return Err(MwiError::Manifest {
                line: line_no,
                message: format!("key '{key}' appears before any [section]"),
            });
        };
        let full = format!("{sec}.{key}");
        if entries.contains_key(&full) {
            return Err(MwiError::Manifest {
                line: line_no,
                message: format!("duplicate key '{full}'"),
            });
        }
        entries.insert(full, Entry { line: line_no, value: value.to_string(), consumed: false });
    }
    Ok(Table { entries })
}

/// Parse and validate a manifest file.
pub fn parse_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut t = tokenize(&text)?;

    let name: String = t.required("experiment.name", "a name")?;
    let output_dir = base.join(t.required::<String>("experiment.output_dir", "a directory")?);

    let resolve_input = |t: &mut Table, key: &str, required: bool| -> Result<Option<PathBuf>> {
        let raw: Option<String> = t.parse(key, "a path")?;
        match raw {
            Some(p) => {
                let full = base.join(p);
                if !full.exists() {
                    return Err(MwiError::InvalidConfig(format!(
                        "{key}: '{}' does not exist",
                        full.display()
                    )));
                }
                Ok(Some(full))
            }
            None if required => Err(MwiError::InvalidConfig(format!(
                "manifest is missing required key '{key}' (a path)"
            ))),
            None => Ok(None),
        }
    };
    let initial_model = resolve_input(&mut t, "paths.initial_model", true)?.unwrap();
    let observed_data = resolve_input(&mut t, "paths.observed_data", true)?.unwrap();
    let true_model = resolve_input(&mut t, "paths.true_model", false)?;

    let method: Method = t
        .parse::<String>("run.method", "fwi or mwi")?
        .ok_or_else(|| {
            MwiError::InvalidConfig("manifest is missing required key 'run.method'".into())
        })
        .and_then(|s| {
            s.parse::<Method>().map_err(MwiError::InvalidConfig)
        })?;
    let mu = t.parse_or("run.mu", "a positive number", 1.0)?;
    let iterations = t.parse_or("run.iterations", "an iteration count", 100usize)?;
    let step_frac = t.parse_or("run.step_frac", "a fraction", DEFAULT_STEP_FRACTION)?;
    let step_length = t.parse("run.step_length", "a step length")?;
    let bounds_enabled = t.flag("run.bounds", true)?;
    let gn_data_hessian = t.flag("run.gn_data_hessian", false)?;

    let v_min: f64 = t.required("bounds.v_min", "a velocity in m/s")?;
    let v_max: f64 = t.required("bounds.v_max", "a velocity in m/s")?;

    let reg_kind = match t.parse::<String>("reg.kind", "none/tikhonov/tv")? {
        Some(s) => s.parse::<RegKind>().map_err(MwiError::InvalidConfig)?,
        None => RegKind::None,
    };
    let reg_weight = t.parse_or("reg.weight", "a nonnegative weight", 0.0)?;
    let tv_inner_iters = t.parse_or("reg.tv_inner_iters", "an iteration cap", 50usize)?;

    let n_sources = t.required("acquisition.sources", "a source count")?;
    let source_side = match t.parse::<String>("acquisition.source_side", "top/bottom/left/right")? {
        Some(s) => s.parse::<Side>().map_err(MwiError::InvalidConfig)?,
        None => Side::Top,
    };
    let n_receivers = t.required("acquisition.receivers", "a receiver count")?;
    let receiver_side =
        match t.parse::<String>("acquisition.receiver_side", "top/bottom/left/right")? {
            Some(s) => s.parse::<Side>().map_err(MwiError::InvalidConfig)?,
            None => Side::Bottom,
        };
    let peak_hz = t.required("acquisition.peak_hz", "a frequency in Hz")?;
    let frequencies = t.float_list("acquisition.frequencies")?;
    let n_frequencies = t.parse_or("acquisition.n_frequencies", "a frequency count", 8usize)?;

    let pml_cells = t.parse_or("modeling.pml_cells", "a cell count", 12usize)?;

    let snapshot_every = t.parse_or("output.snapshot_every", "an iteration stride", 0usize)?;
    let shot_gather_sources = t.usize_list("output.shot_gather_sources")?.unwrap_or_default();

    let stages = t.stage_list("continuation.stages")?;
    let cycles = t.parse_or("continuation.cycles", "a cycle count", 1usize)?;

    t.reject_unconsumed()?;

    if !(v_min > 0.0 && v_min <= v_max) {
        return Err(MwiError::InvalidConfig(format!(
            "bounds must satisfy 0 < v_min <= v_max, got {v_min}, {v_max}"
        )));
    }
    std::fs::create_dir_all(&output_dir)?;

    Ok(RunManifest {
        name,
        output_dir,
        initial_model,
        observed_data,
        true_model,
        method,
        mu,
        iterations,
        step_frac,
        step_length,
        bounds_enabled,
        gn_data_hessian,
        v_min,
        v_max,
        reg_kind,
        reg_weight,
        tv_inner_iters,
        n_sources,
        source_side,
        n_receivers,
        receiver_side,
        peak_hz,
        frequencies,
        n_frequencies,
        pml_cells,
        snapshot_every,
        shot_gather_sources,
        stages,
        cycles,
    })
}
