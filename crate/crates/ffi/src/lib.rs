//! C ABI over `imix`.
//!
//! Every fallible function returns an [`ImixStatus`] and writes results through
//! out-pointers. On failure a message is kept per thread and can be read with
//! [`imix_last_error_message`]. Grids are passed as flat buffers: images are
//! channel-major `3 × height × width` doubles, label maps and masks are
//! row-major `height × width`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use imix::ecs::{measure_ecs, Domain, EcsState, RawEcs};
use imix::grid::{ClassId, ImageGrid, LabelMap, MixMask, ProbMap};
use imix::mixer::{class_sample, i_sample, mix, ClassKind, LabeledImage, MixStrategy, Sampler, Selection, SelectOrder};
use imix::schedule::{eta_at, kcdf, rkcdf, ScheduleConfig};
use imix::sim::train::{simulate, SimulationConfig};
use imix::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImixStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Config = 3,
    DegenerateInput = 4,
    Range = 5,
    Data = 6,
    UndefinedCorrelation = 7,
    Io = 8,
    Json = 9,
    InvalidArgument = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImixDomain {
    Source = 0,
    Target = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImixOrder {
    Sstf = 0,
    Tssf = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImixKind {
    Well = 0,
    Under = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImixSampler {
    ClassMix = 0,
    IMix = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImixScheduleConfig {
    pub a: f64,
    pub b: f64,
    /// Non-zero selects the reversed CDF for the middle phase.
    pub reversed: u8,
    pub eta_min: f64,
    pub eta_max: f64,
    pub total_iters: usize,
    pub phase1_end: f64,
    pub phase3_start: f64,
}

impl From<ImixScheduleConfig> for ScheduleConfig {
    fn from(c: ImixScheduleConfig) -> Self {
        ScheduleConfig {
            a: c.a,
            b: c.b,
            reversed: c.reversed != 0,
            eta_min: c.eta_min,
            eta_max: c.eta_max,
            total_iters: c.total_iters,
            phase1_end: c.phase1_end,
            phase3_start: c.phase3_start,
        }
    }
}

/// Read-only view of one labeled image.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImixSample {
    /// `3 * height * width` doubles in `[0, 1]`, channel-major.
    pub image: *const f64,
    /// `height * width` class indices.
    pub labels: *const u16,
}

/// Caller-owned output buffers for a mixed sample.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImixMixOutput {
    /// `3 * height * width` doubles.
    pub image: *mut f64,
    /// `height * width` class indices.
    pub labels: *mut u16,
    /// `height * width` bytes, 1 where the donor was copied.
    pub mask: *mut u8,
    /// Room for `num_classes` class indices; the first `*selected_count` are written.
    pub selected: *mut u16,
    pub selected_count: *mut usize,
}

// label buffers cross the boundary as uint16_t
const _: () = assert!(std::mem::size_of::<ClassId>() == 2);

/// Opaque smoothed-ECS tracker for both domains.
pub struct ImixEcsState(EcsState);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(ImixStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => ImixStatus::Dimension,
            Error::Config(_) => ImixStatus::Config,
            Error::DegenerateInput(_) => ImixStatus::DegenerateInput,
            Error::Range(_) => ImixStatus::Range,
            Error::Data(_) => ImixStatus::Data,
            Error::UndefinedCorrelation(_) => ImixStatus::UndefinedCorrelation,
            Error::Io(_) => ImixStatus::Io,
            Error::Json(_) => ImixStatus::Json,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(ImixStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ImixStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ImixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ImixStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            ImixStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn write<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

unsafe fn label_map(ptr: *const u16, h: usize, w: usize, c: usize, what: &str) -> Result<LabelMap, Failure> {
    Ok(LabelMap::new(h, w, c, slice(ptr, h * w, what)?.to_vec())?)
}

unsafe fn labeled(sample: &ImixSample, h: usize, w: usize, c: usize, what: &str) -> Result<LabeledImage, Failure> {
    let image = ImageGrid::new(3, h, w, slice(sample.image, 3 * h * w, what)?.to_vec())?;
    Ok(LabeledImage::new(image, label_map(sample.labels, h, w, c, what)?)?)
}

fn domain(d: ImixDomain) -> Domain {
    match d {
        ImixDomain::Source => Domain::Source,
        ImixDomain::Target => Domain::Target,
    }
}

fn kind(k: ImixKind) -> ClassKind {
    match k {
        ImixKind::Well => ClassKind::Well,
        ImixKind::Under => ClassKind::Under,
    }
}

unsafe fn write_selection(sel: &Selection, mask: *mut u8, selected: *mut u16, count: *mut usize, c: usize) -> Result<(), Failure> {
    write_mask(&sel.mask, mask)?;
    let out = slice_mut(selected, c, "selected")?;
    out[..sel.classes.len()].copy_from_slice(&sel.classes);
    write(count, sel.classes.len(), "selected_count")
}

unsafe fn write_mask(mask: &MixMask, out: *mut u8) -> Result<(), Failure> {
    let out = slice_mut(out, mask.data().len(), "mask")?;
    for (o, &m) in out.iter_mut().zip(mask.data()) {
        *o = u8::from(m);
    }
    Ok(())
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn imix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns its full length in bytes, excluding the NUL.
/// Returns 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn imix_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn imix_kcdf(x: f64, a: f64, b: f64, out: *mut f64) -> ImixStatus {
    guard(|| write(out, kcdf(x, a, b)?, "out"))
}

/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn imix_rkcdf(x: f64, a: f64, b: f64, out: *mut f64) -> ImixStatus {
    guard(|| write(out, rkcdf(x, a, b)?, "out"))
}

/// Fills `out` with the default schedule (a = b = 2, ratio 0.7 → 0.3 over K = 2000).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn imix_schedule_default(out: *mut ImixScheduleConfig) -> ImixStatus {
    guard(|| {
        let d = ScheduleConfig::default();
        let c = ImixScheduleConfig {
            a: d.a,
            b: d.b,
            reversed: u8::from(d.reversed),
            eta_min: d.eta_min,
            eta_max: d.eta_max,
            total_iters: d.total_iters,
            phase1_end: d.phase1_end,
            phase3_start: d.phase3_start,
        };
        write(out, c, "out")
    })
}

/// # Safety
/// `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn imix_eta_at(config: *const ImixScheduleConfig, iter: usize, out: *mut f64) -> ImixStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        write(out, eta_at(&(*cfg).into(), iter)?, "out")
    })
}

/// Creates a tracker with every class at `1/num_classes` in both domains.
///
/// # Safety
/// `out` must be a valid pointer; the handle it receives must be released with
/// [`imix_ecs_free`].
#[no_mangle]
pub unsafe extern "C" fn imix_ecs_new(num_classes: usize, tau: f64, out: *mut *mut ImixEcsState) -> ImixStatus {
    guard(|| {
        let state = EcsState::new(num_classes, tau)?;
        write(out, Box::into_raw(Box::new(ImixEcsState(state))), "out")
    })
}

/// # Safety
/// `state` must be NULL or a handle from [`imix_ecs_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn imix_ecs_free(state: *mut ImixEcsState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Folds one raw measurement into `domain`. `present[c] == 0` marks class `c`
/// as absent from this measurement; its `raw[c]` is ignored.
///
/// # Safety
/// `raw` and `present` must each hold `num_classes` elements.
#[no_mangle]
pub unsafe extern "C" fn imix_ecs_update(
    state: *mut ImixEcsState,
    domain_id: ImixDomain,
    raw: *const f64,
    present: *const u8,
    num_classes: usize,
) -> ImixStatus {
    guard(|| {
        let state = state.as_mut().ok_or_else(|| null("state"))?;
        let raw = slice(raw, num_classes, "raw")?;
        let present = slice(present, num_classes, "present")?;
        let raw = RawEcs(raw.iter().zip(present).map(|(&v, &p)| (p != 0).then_some(v)).collect());
        Ok(state.0.update(domain(domain_id), &raw)?)
    })
}

/// Copies the smoothed vector of `domain` into `out` (`num_classes` doubles).
///
/// # Safety
/// `out` must hold `num_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn imix_ecs_snapshot(
    state: *const ImixEcsState,
    domain_id: ImixDomain,
    out: *mut f64,
    num_classes: usize,
) -> ImixStatus {
    guard(|| {
        let state = state.as_ref().ok_or_else(|| null("state"))?;
        let snap = state.0.snapshot(domain(domain_id));
        if snap.len() != num_classes {
            return Err(invalid(format!("tracker has {} classes, buffer {num_classes}", snap.len())));
        }
        slice_mut(out, num_classes, "out")?.copy_from_slice(snap);
        Ok(())
    })
}

/// Raw per-class ECS of a class-major probability map grouped by `labels`.
/// Absent classes get `out_present[c] = 0` and `out_ecs[c] = 0`.
///
/// # Safety
/// `probs` holds `num_classes * height * width` doubles, `labels` `height * width`
/// values, and both outputs `num_classes` elements.
#[no_mangle]
pub unsafe extern "C" fn imix_measure_ecs(
    probs: *const f64,
    labels: *const u16,
    num_classes: usize,
    height: usize,
    width: usize,
    out_ecs: *mut f64,
    out_present: *mut u8,
) -> ImixStatus {
    guard(|| {
        let p = ProbMap::new(num_classes, height, width, slice(probs, num_classes * height * width, "probs")?.to_vec())?;
        let raw = measure_ecs(&p, &label_map(labels, height, width, num_classes, "labels")?)?;
        let ecs = slice_mut(out_ecs, num_classes, "out_ecs")?;
        let present = slice_mut(out_present, num_classes, "out_present")?;
        for c in 0..num_classes {
            ecs[c] = raw.get(c).unwrap_or(0.0);
            present[c] = u8::from(raw.get(c).is_some());
        }
        Ok(())
    })
}

/// ECS-ranked selection over the classes present in `labels`.
///
/// # Safety
/// `labels` and `out_mask` hold `height * width` elements; `ecs` and
/// `out_selected` hold `num_classes`.
#[no_mangle]
pub unsafe extern "C" fn imix_i_sample(
    labels: *const u16,
    height: usize,
    width: usize,
    num_classes: usize,
    ecs: *const f64,
    eta: f64,
    kind_id: ImixKind,
    out_mask: *mut u8,
    out_selected: *mut u16,
    out_selected_count: *mut usize,
) -> ImixStatus {
    guard(|| {
        let labels = label_map(labels, height, width, num_classes, "labels")?;
        let sel = i_sample(&labels, slice(ecs, num_classes, "ecs")?, eta, kind(kind_id))?;
        write_selection(&sel, out_mask, out_selected, out_selected_count, num_classes)
    })
}

/// Uniform choice of half the classes present in `labels`, seeded by `seed`.
///
/// # Safety
/// `labels` and `out_mask` hold `height * width` elements; `out_selected` holds
/// `num_classes`.
#[no_mangle]
pub unsafe extern "C" fn imix_class_sample(
    labels: *const u16,
    height: usize,
    width: usize,
    num_classes: usize,
    seed: u64,
    out_mask: *mut u8,
    out_selected: *mut u16,
    out_selected_count: *mut usize,
) -> ImixStatus {
    guard(|| {
        let labels = label_map(labels, height, width, num_classes, "labels")?;
        let sel = class_sample(&labels, &mut ChaCha8Rng::seed_from_u64(seed))?;
        write_selection(&sel, out_mask, out_selected, out_selected_count, num_classes)
    })
}

/// Mixes a source sample (ground truth) with a target sample (pseudo-labels).
/// The order picks the donor and which domain of `ecs` ranks its classes.
///
/// # Safety
/// All buffers must be sized for `height × width` grids as described on
/// [`ImixSample`] and [`ImixMixOutput`]; `ecs` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn imix_mix(
    source: ImixSample,
    target: ImixSample,
    height: usize,
    width: usize,
    num_classes: usize,
    order: ImixOrder,
    kind_id: ImixKind,
    sampler: ImixSampler,
    ecs: *const ImixEcsState,
    eta: f64,
    seed: u64,
    out: ImixMixOutput,
) -> ImixStatus {
    guard(|| {
        let ecs = ecs.as_ref().ok_or_else(|| null("ecs"))?;
        let source = labeled(&source, height, width, num_classes, "source")?;
        let target = labeled(&target, height, width, num_classes, "target")?;
        let strategy = MixStrategy::new(
            match order {
                ImixOrder::Sstf => SelectOrder::Sstf,
                ImixOrder::Tssf => SelectOrder::Tssf,
            },
            kind(kind_id),
            match sampler {
                ImixSampler::ClassMix => Sampler::ClassMix,
                ImixSampler::IMix => Sampler::IMix,
            },
        );
        let m = mix(&source, &target, strategy, &ecs.0, eta, &mut ChaCha8Rng::seed_from_u64(seed))?;
        slice_mut(out.image, 3 * height * width, "out.image")?.copy_from_slice(m.image.data());
        slice_mut(out.labels, height * width, "out.labels")?.copy_from_slice(m.label.data());
        let sel = Selection { mask: m.mask, classes: m.selected_classes };
        write_selection(&sel, out.mask, out.selected, out.selected_count, num_classes)
    })
}

/// Runs the synthetic self-training simulation described by `config_json` (an
/// empty string or `{}` selects the defaults) and writes `metrics.csv`,
/// `ecs_history.csv`, `iou.csv` and `model.bin` into `out_dir`.
///
/// # Safety
/// Both strings must be valid NUL-terminated UTF-8; `out_miou` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn imix_simulate(config_json: *const c_char, out_dir: *const c_char, out_miou: *mut f64) -> ImixStatus {
    guard(|| {
        let text = |p: *const c_char, what: &str| -> Result<String, Failure> {
            if p.is_null() {
                return Err(null(what));
            }
            CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| invalid(format!("{what} is not UTF-8")))
        };
        let json = text(config_json, "config_json")?;
        let cfg: SimulationConfig = if json.trim().is_empty() {
            SimulationConfig::default()
        } else {
            serde_json::from_str(&json).map_err(|e| Failure(ImixStatus::Config, e.to_string()))?
        };
        let dir = text(out_dir, "out_dir")?;
        let dir = Path::new(&dir);
        let result = simulate(&cfg)?;
        let io = |e: std::io::Error| Failure::from(Error::Io(e));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("metrics.csv"), result.run.metrics_csv()).map_err(io)?;
        fs::write(dir.join("ecs_history.csv"), result.run.ecs_history().to_csv()).map_err(io)?;
        fs::write(dir.join("iou.csv"), result.iou.to_csv()).map_err(io)?;
        fs::write(dir.join("model.bin"), result.run.state.student.to_bytes()).map_err(io)?;
        if !out_miou.is_null() {
            out_miou.write(result.iou.miou);
        }
        Ok(())
    })
}

