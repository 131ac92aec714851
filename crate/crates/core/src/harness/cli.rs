//! Command-line front end. Every subcommand returns a JSON summary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::calibration::{distance_calibration_report, CalibrationInputs};
use super::config::{Config, EnvKind};
use super::edges::{edge_fault, false_edge_count};
use super::eval::{eval_pairs, eval_success_curve, sample_eval_pairs, OraclePolicy, Report};
use super::svg::graph_svg;
use crate::buffer::TrajectoryLog;
use crate::embed::{embed_all, write_embed_curve_csv, Encoder};
use crate::env::oracle::{GeodesicTable, ObsDecoder};
use crate::env::{random_walk, Cell, Environment, GridEnv};
use crate::error::{Error, Result};
use crate::per::{probe, PerConfig};
use crate::planners::rprm_query;
use crate::policy::{GreedyQPolicy, PerPolicy, Policy, RandomPolicy, StitchPolicy};
use crate::qlearn::{write_curve_csv, QModel};
use crate::refine::{build_memory, fit_encoder, refine_cycle, sub_seed, train_q_model, write_rounds_csv, Models, Task};

#[derive(Parser, Debug)]
#[command(name = "palmer", version, about = "Plan over replay-buffer trajectory segments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key.path=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        Config::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Greedy,
    PiM,
    PiMstar,
    Random,
    Oracle,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Random-walk the environment into a buffer file.
    Collect {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the goal-conditioned Q-function into MODELS/q.bin.
    TrainQ {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models: PathBuf,
    },
    /// Train the encoder against MODELS/q.bin.
    TrainEmbed {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models: PathBuf,
    },
    /// Calibrate the retrieval radius and build the roadmap.
    BuildRoadmap {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Also write the roadmap as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Stitch a plan between two cells.
    Plan {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Start cell as `x,y`.
        #[arg(long)]
        start: String,
        /// Goal cell as `x,y`.
        #[arg(long)]
        goal: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Success rates per distance band.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_enum)]
        policy: PolicyKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// One refinement cycle: collect plan executions, retrain on them.
    Refine {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Distance calibration and false-edge audit.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_distance: usize,
        #[arg(long, default_value_t = 200)]
        pairs_per_bin: usize,
        /// Edges are false beyond this multiple of the radius.
        #[arg(long, default_value_t = 1.0)]
        slack: f64,
    },
    /// Buffer inspection.
    Buffer {
        #[command(subcommand)]
        cmd: BufferCmd,
    },
    /// Retrieval inspection.
    Per {
        #[command(subcommand)]
        cmd: PerCmd,
    },
}

#[derive(Subcommand, Debug)]
pub enum BufferCmd {
    Info {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum PerCmd {
    /// Explain one retrieval between two cells.
    Probe {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        start: String,
        #[arg(long)]
        goal: String,
    },
}

/// Structured form of an error for the CLI's stderr.
pub fn error_json(e: &Error) -> Value {
    let kind = match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::Discontinuous(_) => "discontinuous",
        Error::OutOfRange(_) => "out_of_range",
        Error::CorruptHeader(_) => "corrupt_header",
        Error::Version { .. } => "version",
        Error::Truncated(_) => "truncated",
        Error::EmptyLog => "empty_log",
        Error::NegativeCost(_) => "negative_cost",
        Error::Degenerate(_) => "degenerate",
        Error::Diverged { .. } => "diverged",
        Error::InfeasibleBand(_) => "infeasible_band",
        Error::InsufficientData { .. } => "insufficient_data",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    };
    json!({ "error": kind, "message": e.to_string() })
}

fn parse_cell(s: &str) -> Result<Cell> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| Error::InvalidInput(format!("cell {s:?} is not x,y")))?;
    let p = |v: &str| {
        v.trim()
            .parse::<i32>()
            .map_err(|e| Error::InvalidInput(format!("cell {s:?}: {e}")))
    };
    Ok(Cell::new(p(x)?, p(y)?))
}

fn free_cell(env: &GridEnv, s: &str) -> Result<Cell> {
    let c = parse_cell(s)?;
    if !env.maze.is_free(c) {
        return Err(Error::InvalidInput(format!("{c:?} is not a free cell")));
    }
    Ok(c)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn log_summary(log: &TrajectoryLog) -> Value {
    json!({
        "steps": log.total_steps(),
        "episodes": log.num_episodes(),
        "states": log.num_states(),
        "obs_dim": log.obs_dim(),
        "num_actions": log.num_actions(),
    })
}

/// Random walks per the `collect` section.
pub fn collect_log(cfg: &Config) -> Result<TrajectoryLog> {
    match cfg.env.kind {
        EnvKind::Grid => walks(&cfg.grid_env()?, cfg),
        EnvKind::PointMass => walks(&cfg.point_mass_env()?, cfg),
    }
}

fn walks<E: Environment>(env: &E, cfg: &Config) -> Result<TrajectoryLog> {
    let total = cfg.collect.steps;
    let len = if cfg.collect.episode_len == 0 { total } else { cfg.collect.episode_len };
    let mut log = TrajectoryLog::new(env.obs_dim(), env.num_actions());
    let mut done = 0;
    let mut k = 0;
    while done < total {
        let n = len.min(total - done);
        log.extend_from(&random_walk(env, n, sub_seed(cfg.seed, 100 + k))?.log)?;
        done += n;
        k += 1;
    }
    Ok(log)
}

fn load_models(dir: &Path, log: &TrajectoryLog) -> Result<Models> {
    Models::load(dir, log)
}

fn load_encoder(dir: &Path) -> Result<Encoder> {
    Encoder::from_bytes(&std::fs::read(dir.join("encoder.bin"))?)
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Collect { cfg, out } => {
            let c = cfg.load()?;
            let log = collect_log(&c)?;
            log.save(&out)?;
            let mut v = log_summary(&log);
            v["config_hash"] = json!(c.hash());
            v["seed"] = json!(c.seed);
            Ok(v)
        }
        Command::TrainQ { cfg, log, models } => {
            let c = cfg.load()?;
            let log = TrajectoryLog::load(&log)?;
            std::fs::create_dir_all(&models)?;
            let (q, curve) = train_q_model(&log, &c.retrain, sub_seed(c.seed, 1))?;
            q.save(models.join("q.bin"))?;
            write_curve_csv(models.join("q_curve.csv"), &curve)?;
            Ok(json!({
                "backend": c.retrain.backend,
                "final_loss": curve.last().map(|p| p.loss),
                "config_hash": c.hash(),
                "seed": c.seed,
            }))
        }
        Command::TrainEmbed { cfg, log, models } => {
            let c = cfg.load()?;
            let log = TrajectoryLog::load(&log)?;
            let q = QModel::load(models.join("q.bin"))?;
            let (encoder, heads, curve) = fit_encoder(&log, &q, &c.retrain, sub_seed(c.seed, 2))?;
            std::fs::write(models.join("encoder.bin"), encoder.to_bytes())?;
            if let Some(h) = &heads {
                std::fs::write(models.join("heads.bin"), h.to_bytes())?;
            }
            write_embed_curve_csv(models.join("embed_curve.csv"), &curve)?;
            Ok(json!({
                "latent_dim": encoder.latent_dim(),
                "params": encoder.num_params(),
                "final_loss": curve.last().map(|p| p.losses.total),
                "config_hash": c.hash(),
                "seed": c.seed,
            }))
        }
        Command::BuildRoadmap { cfg, log, models, json: json_out } => {
            let c = cfg.load()?;
            let log = TrajectoryLog::load(&log)?;
            let encoder = load_encoder(&models)?;
            let (_, per, roadmap) = build_memory(&log, &encoder, &c.retrain, sub_seed(c.seed, 3))?;
            roadmap.save(models.join("roadmap.bin"))?;
            write_json(&models.join("per.json"), &json!({ "d_p": per.d_p, "l_max": per.l_max }))?;
            if let Some(p) = json_out {
                let decoder = c.grid_env().ok().map(|e| ObsDecoder::new(&e));
                let pose = |o: &[f32]| decoder.as_ref().and_then(|d| d.decode(o)).map(|c| [c.x as f64, c.y as f64]);
                write_json(&p, &crate::planners::roadmap_json(&roadmap, &log, &pose))?;
            }
            Ok(json!({
                "vertices": roadmap.num_vertices(),
                "edges": roadmap.num_edges(),
                "mean_degree": roadmap.mean_degree(),
                "d_p": per.d_p,
                "r": roadmap.r,
                "config_hash": c.hash(),
            }))
        }
        Command::Plan {
            cfg,
            log,
            models,
            start,
            goal,
            out,
            svg,
        } => {
            let c = cfg.load()?;
            let env = c.grid_env()?;
            let log = TrajectoryLog::load(&log)?;
            let m = load_models(&models, &log)?;
            let (s, g) = (free_cell(&env, &start)?, free_cell(&env, &goal)?);
            let (os, og) = (env.observe(&s), env.observe(&g));
            let plan = rprm_query(&m.roadmap, &log, &m.index, &m.per, os.as_slice(), og.as_slice())?;
            let decoder = ObsDecoder::new(&env);
            let cells: Vec<Cell> = plan
                .as_ref()
                .map(|p| p.states().into_iter().filter_map(|k| decoder.decode(log.state(k))).collect())
                .unwrap_or_default();
            let v = json!({
                "start": [s.x, s.y],
                "goal": [g.x, g.y],
                "found": plan.is_some(),
                "plan": plan,
                "cells": cells.iter().map(|c| [c.x, c.y]).collect::<Vec<_>>(),
            });
            write_json(&out, &v)?;
            if let Some(p) = svg {
                let vs: Vec<Cell> = m
                    .roadmap
                    .vertices
                    .iter()
                    .filter_map(|&k| decoder.decode(log.state(k)))
                    .collect();
                let paths = if cells.is_empty() { vec![] } else { vec![cells] };
                std::fs::write(p, graph_svg(&env.maze, &vs, &[], &paths))?;
            }
            Ok(json!({
                "found": v["found"],
                "total_len": v["plan"]["total_len"],
                "total_cost": v["plan"]["total_cost"],
                "config_hash": c.hash(),
            }))
        }
        Command::Eval {
            cfg,
            log,
            models,
            policy,
            out,
            csv,
        } => {
            let c = cfg.load()?;
            let env = c.grid_env()?;
            let log = TrajectoryLog::load(&log)?;
            let table = GeodesicTable::new(&env.maze);
            let pairs = eval_pairs(&env, &table, &c.eval)?;
            let m;
            let mut p: Box<dyn Policy + '_> = match policy {
                PolicyKind::Oracle => Box::new(OraclePolicy::new(&env, &table)),
                PolicyKind::Random => Box::new(RandomPolicy::new(env.num_actions(), sub_seed(c.eval.seed, 7))),
                _ => {
                    m = load_models(&models, &log)?;
                    match policy {
                        PolicyKind::Greedy => Box::new(GreedyQPolicy::new(&m.q)),
                        PolicyKind::PiM => Box::new(PerPolicy::new(m.memory(&log))),
                        _ => Box::new(StitchPolicy::new(m.memory(&log), &m.roadmap, c.refine.replan_every)),
                    }
                }
            };
            let bands = eval_success_curve(&env, p.as_mut(), &pairs, &c.eval)?;
            let report = Report {
                policy: format!("{policy:?}").to_lowercase(),
                config_hash: c.hash(),
                seed: c.eval.seed,
                bands,
            };
            write_json(&out, &serde_json::to_value(&report)?)?;
            if let Some(path) = csv {
                report.write_csv(path)?;
            }
            Ok(serde_json::to_value(&report)?)
        }
        Command::Refine {
            cfg,
            log,
            models,
            out_dir,
        } => {
            let c = cfg.load()?;
            let env = c.grid_env()?;
            let log = TrajectoryLog::load(&log)?;
            let m = load_models(&models, &log)?;
            let table = GeodesicTable::new(&env.maze);
            let metric = c.eval.metric;
            let bands = c.eval.bands.clone();
            let max_rej = c.eval.max_rejections;
            let mut sample_task = |rng: &mut ChaCha8Rng| -> Result<Task<Cell>> {
                let band = bands[rand::Rng::random_range(rng, 0..bands.len())];
                let pair = sample_eval_pairs(&env, &table, metric, band, 1, max_rej, rng)?;
                Ok(Task {
                    start: pair[0].0,
                    goal: pair[0].1,
                    band,
                })
            };
            let radius = c.eval.success_radius;
            let reached = |a: &Cell, b: &Cell| a.euclidean(b) <= radius;
            let rcfg = c.refine_config();
            let cycle = refine_cycle(&env, &log, &m, &rcfg, &mut sample_task, &reached, c.seed)?;
            std::fs::create_dir_all(&out_dir)?;
            cycle.refined.save(out_dir.join("refined.plog"))?;
            cycle.models.save(out_dir.join("models"))?;
            write_rounds_csv(out_dir.join("rounds.csv"), &cycle.rounds)?;
            Ok(json!({
                "rounds": cycle.rounds,
                "refined_steps": cycle.refined.total_steps(),
                "refined_episodes": cycle.refined.num_episodes(),
                "config_hash": c.hash(),
                "seed": c.seed,
            }))
        }
        Command::Report {
            cfg,
            log,
            models,
            out_dir,
            max_distance,
            pairs_per_bin,
            slack,
        } => {
            let c = cfg.load()?;
            let env = c.grid_env()?;
            let log = TrajectoryLog::load(&log)?;
            let m = load_models(&models, &log)?;
            let table = GeodesicTable::new(&env.maze);
            let decoder = ObsDecoder::new(&env);
            std::fs::create_dir_all(&out_dir)?;
            let inputs = CalibrationInputs {
                q: &m.q,
                index: &m.index,
                heads: m.heads.as_ref(),
                log: &log,
                per: &m.per,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(c.seed, 20));
            let cal = distance_calibration_report(&env, &table, &inputs, max_distance, pairs_per_bin, &mut rng);
            cal.write_csv(out_dir.join("calibration.csv"))?;
            std::fs::write(out_dir.join("calibration.svg"), cal.svg())?;
            let edges = false_edge_count(&m.roadmap, &log, &env, &decoder, &table, slack);
            let vs: Vec<Cell> = m
                .roadmap
                .vertices
                .iter()
                .map(|&k| decoder.decode(log.state(k)).unwrap_or(Cell::new(-1, -1)))
                .collect();
            let drawn: Vec<(usize, usize, bool)> = m
                .roadmap
                .edges
                .iter()
                .map(|e| {
                    let bad = edge_fault(e, &m.roadmap, &log, &env, &decoder, &table, slack).is_some();
                    (e.from, e.to, bad)
                })
                .collect();
            std::fs::write(out_dir.join("roadmap.svg"), graph_svg(&env.maze, &vs, &drawn, &[]))?;
            let v = json!({
                "spearman_d_phi": cal.spearman_dphi(max_distance),
                "snr_d_phi": cal.signal_to_noise(1, 5, |s| s.d_phi),
                "snr_max_q": cal.signal_to_noise(1, 5, |s| s.max_q),
                "false_edges": edges.false_edges,
                "total_edges": edges.total,
                "config_hash": c.hash(),
                "seed": c.seed,
            });
            write_json(&out_dir.join("report.json"), &v)?;
            Ok(v)
        }
        Command::Buffer {
            cmd: BufferCmd::Info { log },
        } => {
            let log = TrajectoryLog::load(&log)?;
            Ok(log_summary(&log))
        }
        Command::Per {
            cmd:
                PerCmd::Probe {
                    cfg,
                    log,
                    models,
                    start,
                    goal,
                },
        } => {
            let c = cfg.load()?;
            let env = c.grid_env()?;
            let log = TrajectoryLog::load(&log)?;
            let encoder = load_encoder(&models)?;
            let per_json: Value = serde_json::from_slice(&std::fs::read(models.join("per.json"))?)?;
            let per = PerConfig::new(
                per_json["d_p"].as_f64().unwrap_or(c.retrain.embed.d_p),
                per_json["l_max"].as_u64().map_or(c.retrain.l_max, |v| v as usize),
            );
            let index = embed_all(&encoder, &log);
            let (s, g) = (free_cell(&env, &start)?, free_cell(&env, &goal)?);
            let trace = probe(&index, &log, env.observe(&s).as_slice(), env.observe(&g).as_slice(), &per);
            Ok(serde_json::to_value(trace)?)
        }
    }
}
