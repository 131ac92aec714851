//! C ABI over `palmer-core`.
//!
//! Objects are exposed as opaque handles created by `palmer_*_new`/`_load`
//! functions and released with the matching `_free`. Every fallible call
//! returns a [`PalmerStatus`]; on failure the message is kept per thread and
//! can be read with [`palmer_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use palmer::buffer::TrajectoryLog;
use palmer::embed::{embed_all, EmbeddingIndex, Encoder};
use palmer::env::{random_walk, Cell, Environment, GridEnv, GridMaze, ObsMode};
use palmer::per::{retrieve, PerConfig};
use palmer::planners::{rprm_build, rprm_query, PlannerConfig, Roadmap};
use palmer::qlearn::{step_distance, QFunction, QModel, TabularQ, DEFAULT_GAMMA};
use palmer::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PalmerStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    OutOfRange = 3,
    Io = 4,
    Format = 5,
    InsufficientData = 6,
    NotFound = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

pub struct PalmerEnv(GridEnv);
pub struct PalmerLog(TrajectoryLog);
pub struct PalmerQ(QModel);
pub struct PalmerIndex(EmbeddingIndex);
pub struct PalmerRoadmap(Roadmap);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> PalmerStatus {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::NegativeCost(_) | Error::InfeasibleBand(_) => {
            PalmerStatus::InvalidInput
        }
        Error::OutOfRange(_) => PalmerStatus::OutOfRange,
        Error::Io(_) => PalmerStatus::Io,
        Error::CorruptHeader(_) | Error::Version { .. } | Error::Truncated(_) | Error::Json(_) => PalmerStatus::Format,
        Error::EmptyLog | Error::InsufficientData { .. } => PalmerStatus::InsufficientData,
        Error::Discontinuous(_) | Error::Degenerate(_) | Error::Diverged { .. } => PalmerStatus::Internal,
    }
}

enum Fail {
    Status(PalmerStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null() -> Fail {
    Fail::Status(PalmerStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PalmerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PalmerStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PalmerStatus::Internal
        }
    }
}

unsafe fn obj<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(PalmerStatus::InvalidInput, "string is not UTF-8".into()))
}

fn boxed<T>(slot: &mut *mut T, v: T) {
    *slot = Box::into_raw(Box::new(v));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn dim_check(got: usize, want: usize) -> Result<(), Fail> {
    if got != want {
        return Err(Fail::Status(
            PalmerStatus::InvalidInput,
            format!("observation length {got} does not match dimension {want}"),
        ));
    }
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn palmer_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Grid maze environment. `map` is an ASCII map (`#` wall, `.` free) or null
/// for an open `width × height` grid. `feature_dim` 0 selects `[x, y]`
/// observations, otherwise random features of that (even) dimension.
///
/// # Safety
/// `map` must be null or a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn palmer_env_new(
    map: *const c_char,
    width: usize,
    height: usize,
    feature_dim: usize,
    seed: u64,
    out_env: *mut *mut PalmerEnv,
) -> PalmerStatus {
    guard(|| {
        let slot = out(out_env)?;
        let maze = if map.is_null() {
            if width == 0 || height == 0 {
                return Err(Error::InvalidInput("grid must be non-empty".into()).into());
            }
            GridMaze::open(width, height)
        } else {
            GridMaze::from_ascii(string(map)?)?
        };
        let mode = match feature_dim {
            0 => ObsMode::Identity,
            dim => ObsMode::RandomFeatures { dim },
        };
        boxed(slot, PalmerEnv(GridEnv::new(maze, mode, seed)?));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from [`palmer_env_new`].
#[no_mangle]
pub unsafe extern "C" fn palmer_env_free(env: *mut PalmerEnv) {
    free(env)
}

/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_env_obs_dim(env: *const PalmerEnv) -> usize {
    env.as_ref().map_or(0, |e| e.0.obs_dim())
}

/// Observation of cell `(x, y)` written to `obs[0..len]`.
///
/// # Safety
/// `env` must be a live handle, `obs` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn palmer_env_observe(
    env: *const PalmerEnv,
    x: i32,
    y: i32,
    obs: *mut f32,
    len: usize,
) -> PalmerStatus {
    guard(|| {
        let env = &obj(env)?.0;
        let cell = Cell::new(x, y);
        if !env.maze.is_free(cell) {
            return Err(Error::OutOfRange(format!("cell ({x}, {y}) is not free")).into());
        }
        dim_check(len, env.obs_dim())?;
        slice_mut(obs, len)?.copy_from_slice(env.observe(&cell).as_slice());
        Ok(())
    })
}

/// One environment step from `(x, y)`; actions are 0 up, 1 right, 2 down, 3 left.
///
/// # Safety
/// `env` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn palmer_env_step(
    env: *const PalmerEnv,
    x: i32,
    y: i32,
    action: usize,
    out_x: *mut i32,
    out_y: *mut i32,
) -> PalmerStatus {
    guard(|| {
        let env = &obj(env)?.0;
        let (ox, oy) = (out(out_x)?, out(out_y)?);
        let cell = Cell::new(x, y);
        if !env.maze.is_free(cell) {
            return Err(Error::OutOfRange(format!("cell ({x}, {y}) is not free")).into());
        }
        let (next, _) = env.step(&cell, action)?;
        *ox = next.x;
        *oy = next.y;
        Ok(())
    })
}

/// Uniform random walk of `steps` transitions collected into a new log.
///
/// # Safety
/// `env` must be a live handle; `out_log` must be valid.
#[no_mangle]
pub unsafe extern "C" fn palmer_log_random_walk(
    env: *const PalmerEnv,
    steps: usize,
    seed: u64,
    out_log: *mut *mut PalmerLog,
) -> PalmerStatus {
    guard(|| {
        let env = &obj(env)?.0;
        let slot = out(out_log)?;
        boxed(slot, PalmerLog(random_walk(env, steps, seed)?.log));
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string; `out_log` must be valid.
#[no_mangle]
pub unsafe extern "C" fn palmer_log_load(path: *const c_char, out_log: *mut *mut PalmerLog) -> PalmerStatus {
    guard(|| {
        let slot = out(out_log)?;
        boxed(slot, PalmerLog(TrajectoryLog::load(string(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn palmer_log_save(log: *const PalmerLog, path: *const c_char) -> PalmerStatus {
    guard(|| Ok(obj(log)?.0.save(string(path)?)?))
}

/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_log_free(log: *mut PalmerLog) {
    free(log)
}

/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_log_num_states(log: *const PalmerLog) -> usize {
    log.as_ref().map_or(0, |l| l.0.num_states())
}

/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_log_obs_dim(log: *const PalmerLog) -> usize {
    log.as_ref().map_or(0, |l| l.0.obs_dim())
}

/// Copies stored state `index` into `obs[0..len]`.
///
/// # Safety
/// `log` must be a live handle, `obs` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn palmer_log_state(
    log: *const PalmerLog,
    index: usize,
    obs: *mut f32,
    len: usize,
) -> PalmerStatus {
    guard(|| {
        let log = &obj(log)?.0;
        if index >= log.num_states() {
            return Err(Error::OutOfRange(format!("state {index} of {}", log.num_states())).into());
        }
        dim_check(len, log.obs_dim())?;
        slice_mut(obs, len)?.copy_from_slice(log.state(index));
        Ok(())
    })
}

/// Tabular goal-conditioned Q fitted by sweeps to a fixed point (at most
/// `max_sweeps`).
///
/// # Safety
/// `log` must be a live handle; `out_q` must be valid.
#[no_mangle]
pub unsafe extern "C" fn palmer_q_fit_tabular(
    log: *const PalmerLog,
    max_sweeps: usize,
    out_q: *mut *mut PalmerQ,
) -> PalmerStatus {
    guard(|| {
        let log = &obj(log)?.0;
        let slot = out(out_q)?;
        let mut q = TabularQ::for_log(log, DEFAULT_GAMMA)?;
        q.fit_sweeps(log, max_sweeps)?;
        boxed(slot, PalmerQ(QModel::Tabular(q)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string; `out_q` must be valid.
#[no_mangle]
pub unsafe extern "C" fn palmer_q_load(path: *const c_char, out_q: *mut *mut PalmerQ) -> PalmerStatus {
    guard(|| {
        let slot = out(out_q)?;
        boxed(slot, PalmerQ(QModel::load(string(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `q` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn palmer_q_save(q: *const PalmerQ, path: *const c_char) -> PalmerStatus {
    guard(|| Ok(obj(q)?.0.save(string(path)?)?))
}

/// # Safety
/// `q` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_q_free(q: *mut PalmerQ) {
    free(q)
}

/// Q values of every action for state `s` and goal `g` (both `dim` floats).
///
/// # Safety
/// `q` must be a live handle; `s`, `g` valid for `dim` floats, `values` for
/// `num_values` doubles.
#[no_mangle]
pub unsafe extern "C" fn palmer_q_values(
    q: *const PalmerQ,
    s: *const f32,
    g: *const f32,
    dim: usize,
    values: *mut f64,
    num_values: usize,
) -> PalmerStatus {
    guard(|| {
        let q = &obj(q)?.0;
        let (s, g) = (slice(s, dim)?, slice(g, dim)?);
        let v = q.q_values(s, g);
        if num_values < v.len() {
            return Err(Fail::Status(
                PalmerStatus::BufferTooSmall,
                format!("need {} values, buffer holds {num_values}", v.len()),
            ));
        }
        slice_mut(values, v.len())?.copy_from_slice(&v);
        Ok(())
    })
}

/// Step distance `1 + log_γ(max_a Q)` from `s` to `g`.
///
/// # Safety
/// `q` must be a live handle; `s`, `g` valid for `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn palmer_q_distance(
    q: *const PalmerQ,
    s: *const f32,
    g: *const f32,
    dim: usize,
    out_distance: *mut f64,
) -> PalmerStatus {
    guard(|| {
        let q = &obj(q)?.0;
        *out(out_distance)? = step_distance(q, slice(s, dim)?, slice(g, dim)?);
        Ok(())
    })
}

/// Embedding index of every stored state. `encoder_path` names a saved
/// encoder, or is null for the identity map.
///
/// # Safety
/// `log` must be a live handle, `encoder_path` null or a valid C string.
#[no_mangle]
pub unsafe extern "C" fn palmer_index_new(
    log: *const PalmerLog,
    encoder_path: *const c_char,
    out_index: *mut *mut PalmerIndex,
) -> PalmerStatus {
    guard(|| {
        let log = &obj(log)?.0;
        let slot = out(out_index)?;
        let encoder = if encoder_path.is_null() {
            Encoder::identity(log.obs_dim())
        } else {
            Encoder::from_bytes(&std::fs::read(string(encoder_path)?).map_err(Error::from)?)?
        };
        boxed(slot, PalmerIndex(embed_all(&encoder, log)));
        Ok(())
    })
}

/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_index_free(index: *mut PalmerIndex) {
    free(index)
}

/// Best stored segment from near `s_c` to near `s_g`. Writes the global
/// indices of its first and last states; returns `NotFound` when none exists.
///
/// # Safety
/// Handles must be live; `s_c`, `s_g` valid for `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn palmer_retrieve(
    index: *const PalmerIndex,
    log: *const PalmerLog,
    s_c: *const f32,
    s_g: *const f32,
    dim: usize,
    d_p: f64,
    l_max: usize,
    out_first: *mut usize,
    out_last: *mut usize,
) -> PalmerStatus {
    guard(|| {
        let (index, log) = (&obj(index)?.0, &obj(log)?.0);
        let (first, last) = (out(out_first)?, out(out_last)?);
        dim_check(dim, log.obs_dim())?;
        let cfg = PerConfig::new(d_p, l_max);
        cfg.validate()?;
        match retrieve(index, log, slice(s_c, dim)?, slice(s_g, dim)?, &cfg) {
            Some(seg) => {
                *first = seg.first_state;
                *last = seg.last_state();
                Ok(())
            }
            None => Err(Fail::Status(PalmerStatus::NotFound, "no segment within the radius".into())),
        }
    })
}

/// Retrieval roadmap over `num_vertices` sampled buffer states with
/// reachability radius `r`.
///
/// # Safety
/// Handles must be live; `out_roadmap` must be valid.
#[no_mangle]
pub unsafe extern "C" fn palmer_roadmap_build(
    log: *const PalmerLog,
    index: *const PalmerIndex,
    d_p: f64,
    l_max: usize,
    r: f64,
    num_vertices: usize,
    seed: u64,
    out_roadmap: *mut *mut PalmerRoadmap,
) -> PalmerStatus {
    guard(|| {
        let (log, index) = (&obj(log)?.0, &obj(index)?.0);
        let slot = out(out_roadmap)?;
        let per = PerConfig::new(d_p, l_max);
        let cfg = PlannerConfig {
            r,
            num_vertices,
            ..PlannerConfig::default()
        };
        let rm = rprm_build(log, index, &per, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        boxed(slot, PalmerRoadmap(rm));
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string; `out_roadmap` must be valid.
#[no_mangle]
pub unsafe extern "C" fn palmer_roadmap_load(path: *const c_char, out_roadmap: *mut *mut PalmerRoadmap) -> PalmerStatus {
    guard(|| {
        let slot = out(out_roadmap)?;
        boxed(slot, PalmerRoadmap(Roadmap::load(string(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `roadmap` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn palmer_roadmap_save(roadmap: *const PalmerRoadmap, path: *const c_char) -> PalmerStatus {
    guard(|| Ok(obj(roadmap)?.0.save(string(path)?)?))
}

/// # Safety
/// `roadmap` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_roadmap_free(roadmap: *mut PalmerRoadmap) {
    free(roadmap)
}

/// # Safety
/// `roadmap` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_roadmap_num_vertices(roadmap: *const PalmerRoadmap) -> usize {
    roadmap.as_ref().map_or(0, |r| r.0.num_vertices())
}

/// # Safety
/// `roadmap` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmer_roadmap_num_edges(roadmap: *const PalmerRoadmap) -> usize {
    roadmap.as_ref().map_or(0, |r| r.0.num_edges())
}

/// Plans from `start` to `goal` and writes the global indices of the
/// stitched buffer states into `states`. `out_len` always receives the
/// required length; `BufferTooSmall` is returned when `capacity` is short,
/// `NotFound` when no plan exists.
///
/// # Safety
/// Handles must be live; `start`, `goal` valid for `dim` floats; `states`
/// valid for `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn palmer_roadmap_plan(
    roadmap: *const PalmerRoadmap,
    log: *const PalmerLog,
    index: *const PalmerIndex,
    d_p: f64,
    l_max: usize,
    start: *const f32,
    goal: *const f32,
    dim: usize,
    states: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> PalmerStatus {
    guard(|| {
        let (rm, log, index) = (&obj(roadmap)?.0, &obj(log)?.0, &obj(index)?.0);
        let len_slot = out(out_len)?;
        dim_check(dim, log.obs_dim())?;
        let per = PerConfig::new(d_p, l_max);
        let Some(plan) = rprm_query(rm, log, index, &per, slice(start, dim)?, slice(goal, dim)?)? else {
            *len_slot = 0;
            return Err(Fail::Status(PalmerStatus::NotFound, "no plan".into()));
        };
        let mut path: Vec<usize> = Vec::new();
        for seg in &plan.segments {
            for k in seg.state_indices() {
                if path.last() != Some(&k) {
                    path.push(k);
                }
            }
        }
        *len_slot = path.len();
        if capacity < path.len() {
            return Err(Fail::Status(
                PalmerStatus::BufferTooSmall,
                format!("plan has {} states, buffer holds {capacity}", path.len()),
            ));
        }
        slice_mut(states, path.len())?.copy_from_slice(&path);
        Ok(())
    })
}
