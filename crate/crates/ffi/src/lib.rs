//! C ABI over `groc-core`.
//!
//! Objects cross the boundary as opaque handles, each released with its `groc_*_free`. Every fallible call returns a
//! [`GrocStatus`]; on failure the message is available from [`groc_last_error`] on the same
//! thread until the next failing call. Panics are caught and reported as
//! [`GrocStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use groc_core::condense::{run_condense, Mode};
use groc_core::config::{resolve_dataset, RunConfig, DATA_DIR_ENV};
use groc_core::eval::{train_eval_backbone, Condensed, PreparedGraph};
use groc_core::export;
use groc_core::graph::{Graph, SyntheticGraph};
use groc_core::models::ModelKind;
use groc_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Load = 4,
    Io = 5,
    Shape = 6,
    NonFinite = 7,
    Internal = 8,
    Panic = 9,
}

/// Condensation mode.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrocMode {
    Gcond = 0,
    Groc = 1,
    Timgroc = 2,
}

/// Backbone trained on a condensed graph.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrocBackbone {
    Sgc = 0,
    Gcn = 1,
    Mlp = 2,
}

/// An original graph with its splits.
pub struct GrocGraph {
    graph: Graph,
    prepared: Option<PreparedGraph>,
}

/// A run configuration: condensation, backbone and training settings.
pub struct GrocConfig {
    config: RunConfig,
}

/// A condensed graph.
pub struct GrocCondensed {
    graph: SyntheticGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: GrocStatus,
    message: String,
}

impl Failure {
    fn new(status: GrocStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(GrocStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => GrocStatus::Io,
            Error::Load(_) => GrocStatus::Load,
            Error::Shape(_) => GrocStatus::Shape,
            Error::InvalidArgument(_) | Error::Json(_) => GrocStatus::InvalidArgument,
            Error::Config(_) => GrocStatus::Config,
            Error::NonFinite(_) => GrocStatus::NonFinite,
            _ => GrocStatus::Internal,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> GrocStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => GrocStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            GrocStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(GrocStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("output pointer"));
    }
    *out = value;
    Ok(())
}

unsafe fn fill<T: Copy>(src: impl ExactSizeIterator<Item = T>, buf: *mut T, len: usize) -> Result<(), Failure> {
    if src.len() != len {
        return Err(Failure::new(
            GrocStatus::Shape,
            format!("buffer holds {len} values, {} required", src.len()),
        ));
    }
    if len == 0 {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Failure::null("buffer"));
    }
    let dst = std::slice::from_raw_parts_mut(buf, len);
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s;
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn groc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or null if none. Owned by the
/// library; valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn groc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Opens a dataset directory, or a generated graph named `planted:cora[:seed]` or
/// `planted:small[:seed]`. Relative directories are also looked up under `GROC_DATA_DIR`.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn groc_graph_open(spec: *const c_char, out: *mut *mut GrocGraph) -> GrocStatus {
    guard(|| {
        let spec = text(spec, "spec")?;
        let data_dir = std::env::var_os(DATA_DIR_ENV).map(Into::into);
        let graph = resolve_dataset(spec, None, data_dir)?.load()?;
        store(out, GrocGraph { graph, prepared: None })
    })
}

/// # Safety
/// `graph` must be null or a handle from [`groc_graph_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn groc_graph_free(graph: *mut GrocGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Writes node, feature and class counts; any output may be null.
///
/// # Safety
/// `graph` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn groc_graph_sizes(
    graph: *const GrocGraph,
    nodes: *mut usize,
    features: *mut usize,
    classes: *mut usize,
) -> GrocStatus {
    guard(|| {
        let g = &handle(graph, "graph")?.graph;
        for (p, v) in [(nodes, g.num_nodes()), (features, g.num_features()), (classes, g.num_classes())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// A configuration with every default; the dataset field is unused through this interface.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn groc_config_new(out: *mut *mut GrocConfig) -> GrocStatus {
    guard(|| store(out, GrocConfig { config: RunConfig::default() }))
}

/// Parses a JSON run configuration; missing fields take their defaults, unknown fields are
/// rejected.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn groc_config_from_json(json: *const c_char, out: *mut *mut GrocConfig) -> GrocStatus {
    guard(|| {
        let config: RunConfig = serde_json::from_str(text(json, "json")?).map_err(Error::from)?;
        config.condense.validate()?;
        config.train.validate()?;
        store(out, GrocConfig { config })
    })
}

/// # Safety
/// `config` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn groc_config_free(config: *mut GrocConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn groc_config_set_mode(config: *mut GrocConfig, mode: GrocMode) -> GrocStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| Failure::null("config"))?;
        c.config.condense.mode = match mode {
            GrocMode::Gcond => Mode::Gcond,
            GrocMode::Groc => Mode::Groc,
            GrocMode::Timgroc => Mode::Timgroc,
        };
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn groc_config_set_seed(config: *mut GrocConfig, seed: u64) -> GrocStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| Failure::null("config"))?;
        c.config.condense.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn groc_config_set_backbone(config: *mut GrocConfig, backbone: GrocBackbone) -> GrocStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| Failure::null("config"))?;
        c.config.backbone = match backbone {
            GrocBackbone::Sgc => ModelKind::Sgc,
            GrocBackbone::Gcn => ModelKind::Gcn,
            GrocBackbone::Mlp => ModelKind::Mlp,
        };
        Ok(())
    })
}

/// Condenses `graph` under `config`.
///
/// # Safety
/// `graph` and `config` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn groc_condense(
    graph: *const GrocGraph,
    config: *const GrocConfig,
    out: *mut *mut GrocCondensed,
) -> GrocStatus {
    guard(|| {
        let g = &handle(graph, "graph")?.graph;
        let c = &handle(config, "config")?.config;
        let outcome = run_condense(&c.condense, g)?;
        store(out, GrocCondensed { graph: outcome.graph })
    })
}

/// Reads a `condensed.json` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn groc_condensed_read_json(path: *const c_char, out: *mut *mut GrocCondensed) -> GrocStatus {
    guard(|| {
        let graph = export::read_condensed(Path::new(text(path, "path")?), None)?;
        store(out, GrocCondensed { graph })
    })
}

/// # Safety
/// `condensed` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn groc_condensed_free(condensed: *mut GrocCondensed) {
    if !condensed.is_null() {
        drop(Box::from_raw(condensed));
    }
}

/// Writes node and feature counts; either output may be null.
///
/// # Safety
/// `condensed` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn groc_condensed_sizes(
    condensed: *const GrocCondensed,
    nodes: *mut usize,
    features: *mut usize,
) -> GrocStatus {
    guard(|| {
        let s = &handle(condensed, "condensed")?.graph;
        for (p, v) in [(nodes, s.num_nodes()), (features, s.features.ncols())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the row-major `nodes x features` matrix into `buf`, which must hold exactly
/// `len` values.
///
/// # Safety
/// `condensed` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn groc_condensed_copy_features(
    condensed: *const GrocCondensed,
    buf: *mut f64,
    len: usize,
) -> GrocStatus {
    guard(|| {
        let s = &handle(condensed, "condensed")?.graph;
        fill(s.features.iter().copied(), buf, len)
    })
}

/// Copies the row-major `nodes x nodes` weighted adjacency into `buf`.
///
/// # Safety
/// `condensed` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn groc_condensed_copy_adjacency(
    condensed: *const GrocCondensed,
    buf: *mut f64,
    len: usize,
) -> GrocStatus {
    guard(|| {
        let s = &handle(condensed, "condensed")?.graph;
        fill(s.adjacency.iter().copied(), buf, len)
    })
}

/// Copies the `nodes` class labels into `buf`.
///
/// # Safety
/// `condensed` must be a live handle; `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn groc_condensed_copy_labels(
    condensed: *const GrocCondensed,
    buf: *mut usize,
    len: usize,
) -> GrocStatus {
    guard(|| {
        let s = &handle(condensed, "condensed")?.graph;
        fill(s.labels.iter().copied(), buf, len)
    })
}

/// Writes the condensed graph as `condensed.json`.
///
/// # Safety
/// `condensed` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn groc_condensed_write_json(condensed: *const GrocCondensed, path: *const c_char) -> GrocStatus {
    guard(|| {
        let s = &handle(condensed, "condensed")?.graph;
        export::write_condensed(Path::new(text(path, "path")?), s)?;
        Ok(())
    })
}

/// Trains the configured backbone on `condensed` with `seed`, selects the checkpoint by
/// validation accuracy on `graph`, and writes its test accuracy on `graph`.
///
/// # Safety
/// `condensed`, `graph` and `config` must be live handles; `accuracy` must be writable.
/// `graph` is mutated internally to cache preprocessing, so it must not be used from two
/// threads at once.
#[no_mangle]
pub unsafe extern "C" fn groc_evaluate(
    condensed: *const GrocCondensed,
    graph: *mut GrocGraph,
    config: *const GrocConfig,
    seed: u64,
    accuracy: *mut f64,
) -> GrocStatus {
    guard(|| {
        let s = &handle(condensed, "condensed")?.graph;
        let g = graph.as_mut().ok_or_else(|| Failure::null("graph"))?;
        let c = &handle(config, "config")?.config;
        if s.features.ncols() != g.graph.num_features() || s.num_classes > g.graph.num_classes() {
            return Err(Failure::new(
                GrocStatus::Shape,
                "condensed graph does not match the original graph's features or classes",
            ));
        }
        if g.prepared.is_none() {
            g.prepared = Some(PreparedGraph::new(&g.graph)?);
        }
        let prepared = g.prepared.as_ref().expect("prepared above");
        let outcome = train_eval_backbone(Condensed::Synthetic(s), c.backbone, &g.graph, prepared, &c.train, seed)?;
        write_out(accuracy, outcome.test_accuracy)
    })
}
