//! Run configuration: a TOML file plus `key.path=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::EvalConfig;
use crate::env::{GridEnv, GridMaze, ObsMode, PointMassEnv, PointMassSpec};
use crate::error::{Error, Result};
use crate::refine::{RefineConfig, RetrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Grid,
    PointMass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    pub kind: EnvKind,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { kind: EnvKind::Grid }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Open,
    Rooms,
    Clover,
    /// Read from `grid.map`: `#` is a wall, anything else free.
    Ascii,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub layout: Layout,
    pub width: usize,
    pub height: usize,
    pub obstacle_density: f64,
    pub map: Option<String>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            layout: Layout::Clover,
            width: 20,
            height: 20,
            obstacle_density: 0.05,
            map: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectSection {
    pub steps: usize,
    /// Random walks of this length are concatenated as separate episodes;
    /// 0 means one walk of `steps`.
    pub episode_len: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        CollectSection {
            steps: 50_000,
            episode_len: 0,
        }
    }
}

/// Everything a run needs. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub env: EnvSection,
    pub grid: GridSection,
    pub point_mass: PointMassSpec,
    pub obs: ObsMode,
    pub collect: CollectSection,
    pub retrain: RetrainConfig,
    pub eval: EvalConfig,
    pub refine: RefineConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            env: EnvSection::default(),
            grid: GridSection::default(),
            point_mass: PointMassSpec {
                bounds: [0.0, 0.0, 10.0, 10.0],
                walls: vec![[5.0, 0.0, 5.0, 7.0]],
                dt: 0.1,
                accel_max: 1.0,
                vel_max: 1.0,
            },
            obs: ObsMode::Identity,
            collect: CollectSection::default(),
            retrain: RetrainConfig::default(),
            eval: EvalConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl Config {
    /// Parses TOML text and applies `key.path=value` overrides on top.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies
    /// overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.retrain.q.validate()?;
        self.retrain.embed.validate()?;
        self.retrain.planner.validate()?;
        self.eval.validate()?;
        self.refine.validate()?;
        if self.collect.steps == 0 {
            return Err(Error::Config("collect.steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Refinement settings with the shared retraining section attached.
    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            retrain: self.retrain,
            ..self.refine
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn grid_maze(&self) -> Result<GridMaze> {
        let g = &self.grid;
        match g.layout {
            Layout::Open => GridMaze::new(g.width, g.height, std::iter::empty()),
            Layout::Rooms => GridMaze::rooms(g.width, g.height),
            Layout::Clover => {
                if g.width != g.height {
                    return Err(Error::Config("clover layout needs width == height".into()));
                }
                GridMaze::clover(g.width, g.obstacle_density, self.seed)
            }
            Layout::Ascii => {
                let path = g
                    .map
                    .as_ref()
                    .ok_or_else(|| Error::Config("grid.map is required for the ascii layout".into()))?;
                GridMaze::from_ascii(&std::fs::read_to_string(path)?)
            }
        }
    }

    pub fn grid_env(&self) -> Result<GridEnv> {
        if self.env.kind != EnvKind::Grid {
            return Err(Error::Config("this command needs env.kind = \"grid\"".into()));
        }
        GridEnv::new(self.grid_maze()?, self.obs, self.seed)
    }

    pub fn point_mass_env(&self) -> Result<PointMassEnv> {
        PointMassEnv::new(self.point_mass.clone(), self.obs, self.seed)
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML value
/// when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = Config::from_toml("", &[]).unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let text = "seed = 3\n[grid]\nwidth = 12\nheight = 12\nobstacle_density = 0.1\n[obs]\nmode = \"random_features\"\ndim = 32\n";
        let c = Config::from_toml(text, &["grid.width=10".into(), "env.kind=grid".into(), "retrain.q.lr=0.5".into()])
            .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.grid.width, 10);
        assert_eq!(c.grid.height, 12);
        assert_eq!(c.obs, ObsMode::RandomFeatures { dim: 32 });
        assert_eq!(c.retrain.q.lr, 0.5);
    }

    #[test]
    fn unknown_keys_and_bad_overrides_fail() {
        assert!(Config::from_toml("bogus = 1", &[]).is_err());
        assert!(Config::from_toml("", &["no_equals".into()]).is_err());
        assert!(Config::from_toml("", &["seed.x=1".into()]).is_err());
        assert!(Config::from_toml("", &["collect.steps=0".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn layouts_build() {
        let mut c = Config::default();
        assert!(c.grid_env().is_ok());
        c.grid.layout = Layout::Open;
        c.grid.width = 7;
        assert_eq!(c.grid_env().unwrap().maze.free_cells().len(), 7 * 20);
        c.grid.layout = Layout::Ascii;
        assert!(c.grid_env().is_err());
        c.env.kind = EnvKind::PointMass;
        assert!(c.grid_env().is_err());
        assert!(c.point_mass_env().is_ok());
    }
}
