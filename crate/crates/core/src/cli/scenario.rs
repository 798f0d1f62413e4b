//! Scenario files: one JSON document naming the grid, the target region, the
//! simulation settings and the cap sweep.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::attack_sim::SimConfig;
use crate::grid::{
    build_admittance, kundur_two_area, partition_admittance, validate_topology, GridTopology, ValidatedGrid,
};
use crate::region::StabilityRegion;
use crate::state_space::{grid_ss, StateSpace};

/// Name that selects the bundled two-area grid instead of a file.
pub const PRESET_NAME: &str = "kundur2area";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Governor {
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub relative_error: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_grid")]
    pub grid: String,
    /// Overrides the governor gains of every machine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub governor: Option<Governor>,
    #[serde(default = "StabilityRegion::default_attack")]
    pub region: StabilityRegion,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "default_caps")]
    pub caps_mw: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    /// Directory a relative grid path resolves against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "kundur".into()
}

fn default_grid() -> String {
    PRESET_NAME.into()
}

fn default_caps() -> Vec<f64> {
    vec![50.0, 100.0, 200.0]
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: default_name(),
            grid: default_grid(),
            governor: None,
            region: StabilityRegion::default_attack(),
            sim: SimConfig::default(),
            caps_mw: default_caps(),
            perturbation: None,
            outputs: default_outputs(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// A scenario with its grid loaded and its model assembled.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub grid: ValidatedGrid,
    pub model: StateSpace,
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::validation(format!("file not found: {}", path.display()))
        } else {
            CliError::validation(format!("cannot read {}: {e}", path.display()))
        }
    })
}

impl Scenario {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut s: Scenario = serde_json::from_str(text).map_err(|e| CliError::validation(format!("scenario: {e}")))?;
        s.base_dir = base_dir.to_path_buf();
        Ok(s)
    }

    /// Relative `grid` and `outputs` paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_file(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut s = Self::from_json(&text, dir)?;
        s.outputs = dir.join(&s.outputs);
        Ok(s)
    }

    /// Configuration checks that need no files.
    pub fn validate(&self) -> Result<(), CliError> {
        self.region.validate()?;
        self.sim.validate()?;
        if let Some(c) = self.caps_mw.iter().find(|c| !(**c > 0.0)) {
            return Err(CliError::validation(format!("caps_mw entry {c} is not positive")));
        }
        if let Some(p) = &self.perturbation {
            if !(0.0..1.0).contains(&p.relative_error) {
                return Err(CliError::validation(format!(
                    "perturbation relative_error {} outside [0, 1)",
                    p.relative_error
                )));
            }
        }
        Ok(())
    }

    pub fn grid_path(&self) -> Option<PathBuf> {
        (self.grid != PRESET_NAME).then(|| self.base_dir.join(&self.grid))
    }

    pub fn topology(&self) -> Result<GridTopology, CliError> {
        match self.grid_path() {
            None => Ok(kundur_two_area()),
            Some(path) => Ok(GridTopology::from_json(&read_file(&path)?)?),
        }
    }

    pub fn prepare(self) -> Result<Prepared, CliError> {
        self.validate()?;
        let topology = self.topology()?;
        self.prepare_with(topology)
    }

    /// As [`Scenario::prepare`] with the grid supplied directly.
    pub fn prepare_with(self, topology: GridTopology) -> Result<Prepared, CliError> {
        self.validate()?;
        let mut grid = validate_topology(topology)?;
        if let Some(g) = self.governor {
            grid = grid.with_governor(g.kp, g.ki)?;
        }
        let model = attack_model(&grid)?;
        if let Some(x0) = &self.sim.initial_state {
            if x0.len() != model.states() {
                return Err(CliError::validation(format!(
                    "initial_state has {} entries, model has {} states",
                    x0.len(),
                    model.states()
                )));
            }
        }
        Ok(Prepared {
            scenario: self,
            grid,
            model,
        })
    }
}

/// State-space model with one attack input per demand bus.
pub fn attack_model(grid: &ValidatedGrid) -> Result<StateSpace, CliError> {
    let partition = partition_admittance(&build_admittance(grid), &grid.kinds())?;
    Ok(grid_ss(grid, &partition, &grid.demand_buses())?)
}

impl Prepared {
    /// Content address of a design: the scenario minus its output
    /// location, the resolved grid, the seed and a design tag.
    pub fn design_hash(&self, tag: &str) -> String {
        let mut s = self.scenario.clone();
        s.outputs = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&s).expect("scenario serialises"));
        h.update(b"\n");
        h.update(self.grid.topology().to_json().as_bytes());
        h.update(format!("\nseed={}\ntag={tag}", self.scenario.sim.seed).as_bytes());
        hex::encode(&h.finalize()[..8])
    }
}
