//! C interface to `mlc_noise`.
//!
//! Datasets, noise ledgers and run reports cross the boundary as opaque
//! handles that the caller frees with the matching `*_free` function.
//! Every fallible call returns an [`MlcnStatus`]; on failure the message is
//! available from [`mlcn_last_error`] on the same thread until the next
//! failing call.
//!
//! Matrices are dense row-major buffers. Label cells are `uint8_t` 0/1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::Array2;

use mlc_noise::config::ExperimentConfig;
use mlc_noise::dataset::{self, FeatureMatrix, MultiLabelDataset, SynthSpec};
use mlc_noise::experiment;
use mlc_noise::metrics;
use mlc_noise::noise::{self, TransitionMatrix};
use mlc_noise::refurbish;
use mlc_noise::selection;
use mlc_noise::{Error, LabelMatrix, NoiseLedger, RunReport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlcnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Config = 6,
    MissingLedger = 7,
    Calibration = 8,
    InsufficientNegatives = 9,
    NonFinite = 10,
    /// Average precision of a ranking without positives.
    NoPositives = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlcnNoise {
    /// `param` is the requested noise level.
    Uniform = 0,
    /// `param` is the per-class rate of positives flipped down.
    Mixed = 1,
}

pub struct MlcnDataset(MultiLabelDataset);

pub struct MlcnLedger(NoiseLedger);

pub struct MlcnReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(e: &Error) -> MlcnStatus {
    match e {
        Error::Io { .. } => MlcnStatus::Io,
        Error::Parse { .. } => MlcnStatus::Parse,
        Error::Shape(_) => MlcnStatus::Shape,
        Error::InvalidArgument(_) | Error::EmptyBatch => MlcnStatus::InvalidArgument,
        Error::Calibration { .. } => MlcnStatus::Calibration,
        Error::InsufficientNegatives { .. } => MlcnStatus::InsufficientNegatives,
        Error::NonFinite(_) => MlcnStatus::NonFinite,
        Error::Config(_) => MlcnStatus::Config,
        Error::MissingLedger(_) => MlcnStatus::MissingLedger,
    }
}

/// Error raised inside a call: a status plus its message.
struct Fail(MlcnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MlcnStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MlcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlcnStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {message}"));
            MlcnStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(MlcnStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_mut<'a, T>(data: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Fail> {
    h.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Copies `src` into a caller buffer of `capacity` elements.
unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, capacity: usize) -> Result<(), Fail> {
    if capacity < src.len() {
        return Err(Fail(
            MlcnStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        ));
    }
    slice_mut(out, src.len(), "output buffer")?.copy_from_slice(src);
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mlcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generates a synthetic dataset.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_synth_generate(
    n: usize,
    d: usize,
    classes: usize,
    prevalence: f64,
    correlation: f64,
    seed: u64,
    out: *mut *mut MlcnDataset,
) -> MlcnStatus {
    guard(|| {
        let spec = SynthSpec {
            n,
            d,
            classes,
            target_prevalence: prevalence,
            class_correlation: correlation,
            seed,
        };
        let ds = dataset::synth_generate(&spec)?;
        put(out, Box::into_raw(Box::new(MlcnDataset(ds))), "out")
    })
}

/// Builds a dataset from row-major buffers: `features` is `rows x d`,
/// `labels` is `rows x classes`.
///
/// # Safety
/// The buffers must hold `rows * d` and `rows * classes` elements; `out`
/// must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_dataset_new(
    features: *const f64,
    labels: *const u8,
    rows: usize,
    d: usize,
    classes: usize,
    out: *mut *mut MlcnDataset,
) -> MlcnStatus {
    guard(|| {
        let x = slice(features, rows * d, "features")?.to_vec();
        let y = slice(labels, rows * classes, "labels")?.to_vec();
        let shape_err = |e: ndarray::ShapeError| Fail(MlcnStatus::Shape, e.to_string());
        let features = FeatureMatrix::new(Array2::from_shape_vec((rows, d), x).map_err(shape_err)?)?;
        let labels = LabelMatrix::new(Array2::from_shape_vec((rows, classes), y).map_err(shape_err)?)?;
        let ds = MultiLabelDataset::new(
            features,
            labels,
            (0..rows).map(|i| i.to_string()).collect(),
            (0..classes).map(|c| c.to_string()).collect(),
        )?;
        put(out, Box::into_raw(Box::new(MlcnDataset(ds))), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_dataset_load_csv(path: *const c_char, out: *mut *mut MlcnDataset) -> MlcnStatus {
    guard(|| {
        let ds = dataset::load_csv(path_arg(path)?)?;
        put(out, Box::into_raw(Box::new(MlcnDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must be a live dataset handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mlcn_dataset_save_csv(ds: *const MlcnDataset, path: *const c_char) -> MlcnStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        dataset::save_csv(&ds.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Writes rows, features and classes; any output pointer may be null.
///
/// # Safety
/// `ds` must be a live dataset handle; non-null outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlcn_dataset_shape(
    ds: *const MlcnDataset,
    rows: *mut usize,
    d: *mut usize,
    classes: *mut usize,
) -> MlcnStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        for (out, v) in [(rows, ds.len()), (d, ds.n_features()), (classes, ds.n_classes())] {
            if !out.is_null() {
                out.write(v);
            }
        }
        Ok(())
    })
}

/// Copies the `rows x classes` label matrix into `out`.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn mlcn_dataset_labels(ds: *const MlcnDataset, out: *mut u8, capacity: usize) -> MlcnStatus {
    guard(|| copy_out(handle(ds, "dataset")?.0.labels().as_slice(), out, capacity))
}

/// Copies the `rows x d` feature matrix into `out`.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mlcn_dataset_features(ds: *const MlcnDataset, out: *mut f64, capacity: usize) -> MlcnStatus {
    guard(|| {
        let x = handle(ds, "dataset")?.0.features().view();
        let flat: Vec<f64> = x.iter().copied().collect();
        copy_out(&flat, out, capacity)
    })
}

/// # Safety
/// `ds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn mlcn_dataset_free(ds: *mut MlcnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

fn finish_injection(
    ds: &MultiLabelDataset,
    noisy: LabelMatrix,
    ledger: NoiseLedger,
    out_noisy: *mut *mut MlcnDataset,
    out_ledger: *mut *mut MlcnLedger,
) -> Result<(), Fail> {
    if out_noisy.is_null() {
        return Err(null("out_noisy"));
    }
    if out_ledger.is_null() {
        return Err(null("out_ledger"));
    }
    let noisy = ds.with_labels(noisy)?;
    // SAFETY: both checked non-null; the caller guarantees validity.
    unsafe {
        out_noisy.write(Box::into_raw(Box::new(MlcnDataset(noisy))));
        out_ledger.write(Box::into_raw(Box::new(MlcnLedger(ledger))));
    }
    Ok(())
}

/// Corrupts the labels of `ds` into a new dataset plus its ledger.
///
/// # Safety
/// `ds` must be a live dataset handle; outputs valid for pointer writes.
#[no_mangle]
pub unsafe extern "C" fn mlcn_inject(
    ds: *const MlcnDataset,
    strategy: MlcnNoise,
    param: f64,
    seed: u64,
    out_noisy: *mut *mut MlcnDataset,
    out_ledger: *mut *mut MlcnLedger,
) -> MlcnStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let (noisy, ledger) = match strategy {
            MlcnNoise::Uniform => noise::inject_uniform(ds.labels(), param, seed)?,
            MlcnNoise::Mixed => noise::inject_mixed(ds.labels(), param, seed)?,
        };
        finish_injection(ds, noisy, ledger, out_noisy, out_ledger)
    })
}

/// Class-swap noise from a row-stochastic `classes x classes` matrix.
///
/// # Safety
/// `ds` must be a live dataset handle, `matrix` must hold `classes^2`
/// doubles; outputs valid for pointer writes.
#[no_mangle]
pub unsafe extern "C" fn mlcn_inject_transition(
    ds: *const MlcnDataset,
    matrix: *const f64,
    classes: usize,
    seed: u64,
    out_noisy: *mut *mut MlcnDataset,
    out_ledger: *mut *mut MlcnLedger,
) -> MlcnStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let values = slice(matrix, classes * classes, "matrix")?.to_vec();
        let values = Array2::from_shape_vec((classes, classes), values).map_err(|e| Fail(MlcnStatus::Shape, e.to_string()))?;
        let t = TransitionMatrix::new(values)?;
        let (noisy, ledger) = noise::inject_transition(ds.labels(), &t, seed)?;
        finish_injection(ds, noisy, ledger, out_noisy, out_ledger)
    })
}

/// Mixed-noise rate that reaches `epsilon` at the given overall prevalence.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_mixed_rate_for_target(epsilon: f64, prevalence: f64, out: *mut f64) -> MlcnStatus {
    guard(|| put(out, noise::mixed_rate_for_target(epsilon, prevalence)?, "out"))
}

/// Realized noise level: flipped cells over all cells.
///
/// # Safety
/// `ledger` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_ledger_epsilon(ledger: *const MlcnLedger, out: *mut f64) -> MlcnStatus {
    guard(|| put(out, handle(ledger, "ledger")?.0.epsilon(), "out"))
}

/// Per-class noise levels, one double per class.
///
/// # Safety
/// `ledger` must be a live handle; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mlcn_ledger_epsilon_per_class(ledger: *const MlcnLedger, out: *mut f64, capacity: usize) -> MlcnStatus {
    guard(|| copy_out(handle(ledger, "ledger")?.0.epsilon_per_class(), out, capacity))
}

/// Row-major flip mask, 1 where the label was inverted.
///
/// # Safety
/// `ledger` must be a live handle; `out` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn mlcn_ledger_flip_mask(ledger: *const MlcnLedger, out: *mut u8, capacity: usize) -> MlcnStatus {
    guard(|| copy_out(handle(ledger, "ledger")?.0.flip_mask().as_slice(), out, capacity))
}

/// # Safety
/// `ledger` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mlcn_ledger_save(ledger: *const MlcnLedger, path: *const c_char) -> MlcnStatus {
    guard(|| {
        handle(ledger, "ledger")?.0.save(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_ledger_load(path: *const c_char, out: *mut *mut MlcnLedger) -> MlcnStatus {
    guard(|| {
        let ledger = NoiseLedger::load(path_arg(path)?)?;
        put(out, Box::into_raw(Box::new(MlcnLedger(ledger))), "out")
    })
}

/// # Safety
/// `ledger` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn mlcn_ledger_free(ledger: *mut MlcnLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// `clip(alpha * epsilon, 0, 1)`.
#[no_mangle]
pub extern "C" fn mlcn_forget_rate(alpha: f64, epsilon: f64) -> f64 {
    selection::forget_rate(alpha, epsilon)
}

/// Binary entropy, scaled to `[0, 1]`, of a window with `ones` positive
/// predictions out of `window`.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_scaled_entropy(ones: usize, window: usize, out: *mut f64) -> MlcnStatus {
    guard(|| {
        if window == 0 || ones > window {
            return Err(Fail(
                MlcnStatus::InvalidArgument,
                format!("{ones} ones in a window of {window}"),
            ));
        }
        put(out, refurbish::scaled_entropy(ones, window), "out")
    })
}

/// Average precision of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_average_precision(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> MlcnStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let y = slice(labels, n, "labels")?;
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Fail(MlcnStatus::InvalidArgument, format!("label {bad} is not 0 or 1")));
        }
        let ap = metrics::average_precision(s, y)
            .ok_or_else(|| Fail(MlcnStatus::NoPositives, "no positive labels".into()))?;
        put(out, ap, "out")
    })
}

/// Pooled small-loss selection: `keep[k]` is set to 1 for the
/// `ceil((1 - tau) m)` smallest losses, ties by index.
///
/// # Safety
/// `losses` and `keep` must hold `m` elements.
#[no_mangle]
pub unsafe extern "C" fn mlcn_select_small_loss(losses: *const f64, m: usize, tau: f64, keep: *mut u8) -> MlcnStatus {
    guard(|| {
        let mask = selection::select_small_loss(slice(losses, m, "losses")?, tau)?;
        let out = slice_mut(keep, m, "keep")?;
        for (o, &k) in out.iter_mut().zip(&mask.keep) {
            *o = u8::from(k);
        }
        Ok(())
    })
}

/// Per-class selection over a row-major `rows x classes` loss matrix with
/// one forget rate per class.
///
/// # Safety
/// `losses` and `keep` must hold `rows * classes` elements, `taus` must
/// hold `classes`.
#[no_mangle]
pub unsafe extern "C" fn mlcn_select_small_loss_per_class(
    losses: *const f64,
    rows: usize,
    classes: usize,
    taus: *const f64,
    keep: *mut u8,
) -> MlcnStatus {
    guard(|| {
        let m = rows * classes;
        let mask = selection::select_small_loss_cdnr_matrix(slice(losses, m, "losses")?, slice(taus, classes, "taus")?)?;
        let out = slice_mut(keep, m, "keep")?;
        for (o, &k) in out.iter_mut().zip(&mask.keep) {
            *o = u8::from(k);
        }
        Ok(())
    })
}

/// Loads a config file and trains its first seed (or `seed` when
/// `use_seed` is non-zero). Nothing is written to disk.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` valid for a
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_run_config(
    config_path: *const c_char,
    use_seed: i32,
    seed: u64,
    out: *mut *mut MlcnReport,
) -> MlcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut cfg = ExperimentConfig::load(path_arg(config_path)?)?;
        cfg.dump_refurbish = false;
        let seed = if use_seed != 0 { seed } else { cfg.seeds[0] };
        let prepared = experiment::prepare(&cfg)?;
        experiment::preflight(&cfg, &prepared)?;
        let report = experiment::run_seed(&cfg, &prepared, seed)?;
        out.write(Box::into_raw(Box::new(MlcnReport(report))));
        Ok(())
    })
}

/// Final test mAP of the network selected by validation.
///
/// # Safety
/// `report` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_report_test_map(report: *const MlcnReport, out: *mut f64) -> MlcnStatus {
    guard(|| put(out, handle(report, "report")?.0.final_stats.test_map, "out"))
}

/// Number of epochs recorded in the report.
///
/// # Safety
/// `report` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn mlcn_report_epochs(report: *const MlcnReport, out: *mut usize) -> MlcnStatus {
    guard(|| put(out, handle(report, "report")?.0.epochs.len(), "out"))
}

/// Writes the report as JSON.
///
/// # Safety
/// `report` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mlcn_report_save_json(report: *const MlcnReport, path: *const c_char) -> MlcnStatus {
    guard(|| {
        mlc_noise::report::save_report(&handle(report, "report")?.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn mlcn_report_free(report: *mut MlcnReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
