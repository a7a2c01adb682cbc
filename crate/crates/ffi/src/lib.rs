//! C ABI over the hoigen core: box geometry, class-wise NMS, average
//! precision, bias, and predicate scoring with a trained checkpoint.
//!
//! Every fallible call returns a [`HoigenStatus`]; on failure the message is
//! available from [`hoigen_last_error`] on the same thread. Handles are opaque
//! and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hoigen::datamodel::{load_embeddings, BoundingBox, EmbeddingTable, ImageInfo};
use hoigen::eval::{average_precision, bias, BiasCounts, GroundTruth, HoiClass};
use hoigen::geometry::{geometric_feature, iou, GEOMETRIC_FEATURE_LEN};
use hoigen::nn::{assemble_parts, forward, load_checkpoint, PredicateModel};
use hoigen::pipeline::{nms_indices, HoiDetection};
use hoigen::HoiError;

/// Length of the buffer filled by [`hoigen_geometric_feature`].
pub const HOIGEN_GEOMETRIC_FEATURE_LEN: usize = 14;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoigenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InvalidData = 5,
    Config = 6,
    InfeasibleSplit = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Axis-aligned box in pixels, `x1 < x2`, `y1 < y2`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoigenBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Scored interaction for [`hoigen_nms`]; classes are caller-chosen ids.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoigenCandidate {
    pub human: HoigenBox,
    pub object: HoigenBox,
    pub object_class: u32,
    pub predicate: u32,
    pub score: f64,
}

/// Human-object pair of one image; `score` is ignored for ground truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoigenPair {
    pub image: u64,
    pub human: HoigenBox,
    pub object: HoigenBox,
    pub score: f64,
}

/// Trained predicate head.
pub struct HoigenModel {
    model: PredicateModel,
    names: Vec<CString>,
}

/// Word-vector table keyed by class name.
pub struct HoigenEmbeddings {
    table: EmbeddingTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HoigenStatus, String);

impl From<HoiError> for Failure {
    fn from(e: HoiError) -> Self {
        let status = match &e {
            HoiError::Io { .. } => HoigenStatus::Io,
            HoiError::Parse { .. } => HoigenStatus::Parse,
            HoiError::Config(_) => HoigenStatus::Config,
            HoiError::InfeasibleSplit(_) => HoigenStatus::InfeasibleSplit,
            HoiError::Invalid { .. }
            | HoiError::Dimension { .. }
            | HoiError::Missing { .. }
            | HoiError::DegenerateBox(_) => HoigenStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F>(f: F) -> HoigenStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            HoigenStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            HoigenStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HoigenStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(HoigenStatus::InvalidArgument, message.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Slice view that accepts a null pointer for an empty slice.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn to_box(b: &HoigenBox) -> Result<BoundingBox, Failure> {
    Ok(BoundingBox::new(b.x1, b.y1, b.x2, b.y2)?)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hoigen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn hoigen_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Intersection over union of two boxes; 0 for disjoint boxes.
///
/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hoigen_iou(a: *const HoigenBox, b: *const HoigenBox, out: *mut f64) -> HoigenStatus {
    guard(|| {
        let a = to_box(deref(a, "a")?)?;
        let b = to_box(deref(b, "b")?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = iou(&a, &b);
        Ok(())
    })
}

/// Fills `out[0..14]` with the geometric relation feature of a human and an
/// object box in an image of `width` x `height` pixels.
///
/// # Safety
/// `human` and `object` must be valid; `out` must hold 14 doubles.
#[no_mangle]
pub unsafe extern "C" fn hoigen_geometric_feature(
    human: *const HoigenBox,
    object: *const HoigenBox,
    width: f64,
    height: f64,
    out: *mut f64,
) -> HoigenStatus {
    guard(|| {
        let h = to_box(deref(human, "human")?)?;
        let o = to_box(deref(object, "object")?)?;
        let img = ImageInfo::new("", width, height)?;
        let f = geometric_feature(&h, &o, &img)?;
        slice_mut(out, GEOMETRIC_FEATURE_LEN, "out")?.copy_from_slice(f.as_slice());
        Ok(())
    })
}

/// Class-wise greedy NMS over union boxes. Writes the input positions of the
/// kept candidates, highest score first, to `keep` (room for `n` entries) and
/// their number to `keep_len`.
///
/// # Safety
/// `candidates` must hold `n` entries and `keep` room for `n` indices.
#[no_mangle]
pub unsafe extern "C" fn hoigen_nms(
    candidates: *const HoigenCandidate,
    n: usize,
    nms_iou: f64,
    keep: *mut usize,
    keep_len: *mut usize,
) -> HoigenStatus {
    guard(|| {
        let cands = slice(candidates, n, "candidates")?;
        let keep = slice_mut(keep, n, "keep")?;
        let keep_len = keep_len.as_mut().ok_or_else(|| null("keep_len"))?;
        if !(0.0..=1.0).contains(&nms_iou) {
            return Err(invalid(format!("nms_iou {nms_iou} outside [0, 1]")));
        }
        let dets = cands
            .iter()
            .map(|c| {
                Ok(HoiDetection {
                    image_id: String::new(),
                    human_box: to_box(&c.human)?,
                    object_box: to_box(&c.object)?,
                    object_class: c.object_class.to_string(),
                    predicate: c.predicate.to_string(),
                    score: c.score,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let kept = nms_indices(&dets, nms_iou);
        keep[..kept.len()].copy_from_slice(&kept);
        *keep_len = kept.len();
        Ok(())
    })
}

/// All-point interpolated average precision of one HOI class.
///
/// # Safety
/// `detections` must hold `n_detections` entries and `ground_truth`
/// `n_ground_truth` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hoigen_average_precision(
    detections: *const HoigenPair,
    n_detections: usize,
    ground_truth: *const HoigenPair,
    n_ground_truth: usize,
    out: *mut f64,
) -> HoigenStatus {
    guard(|| {
        let class = HoiClass::new("", "");
        let dets = slice(detections, n_detections, "detections")?
            .iter()
            .map(|d| {
                Ok(HoiDetection {
                    image_id: d.image.to_string(),
                    human_box: to_box(&d.human)?,
                    object_box: to_box(&d.object)?,
                    object_class: String::new(),
                    predicate: String::new(),
                    score: d.score,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let gts = slice(ground_truth, n_ground_truth, "ground_truth")?
            .iter()
            .map(|g| {
                Ok(GroundTruth {
                    image_id: g.image.to_string(),
                    class: class.clone(),
                    human_box: to_box(&g.human)?,
                    object_box: to_box(&g.object)?,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = average_precision(&class, &dets, &gts)?;
        Ok(())
    })
}

/// Share of predicate `index` among the per-predicate instance `counts` of
/// one object.
///
/// # Safety
/// `counts` must hold `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hoigen_bias(counts: *const u64, n: usize, index: usize, out: *mut f64) -> HoigenStatus {
    guard(|| {
        let counts = slice(counts, n, "counts")?;
        if index >= n {
            return Err(invalid(format!("index {index} out of range for {n} counts")));
        }
        let mut c = BiasCounts::default();
        for (i, &k) in counts.iter().enumerate() {
            c.add(&i.to_string(), "object", k as usize);
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = bias(&c, &index.to_string(), "object")?;
        Ok(())
    })
}

/// Loads a checkpoint written by `hoigen train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. The
/// handle must be released with [`hoigen_model_free`].
#[no_mangle]
pub unsafe extern "C" fn hoigen_model_load(path: *const c_char, out: *mut *mut HoigenModel) -> HoigenStatus {
    guard(|| {
        let path = string(path, "path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let checkpoint = load_checkpoint(Path::new(path))?;
        let names = checkpoint
            .model
            .predicates
            .iter()
            .map(|p| CString::new(p.as_str()).map_err(|_| invalid("predicate name contains NUL")))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(HoigenModel { model: checkpoint.model, names }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`hoigen_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hoigen_model_free(model: *mut HoigenModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of predicates scored by the model; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoigen_model_num_predicates(model: *const HoigenModel) -> usize {
    model.as_ref().map_or(0, |m| m.names.len())
}

/// Name of predicate `index`, owned by the model; null when out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoigen_model_predicate(model: *const HoigenModel, index: usize) -> *const c_char {
    model.as_ref().and_then(|m| m.names.get(index)).map_or(std::ptr::null(), |c| c.as_ptr())
}

/// Length of the model input vector; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoigen_model_input_dim(model: *const HoigenModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.dims.input_dim())
}

/// Predicate probabilities for an assembled input vector.
///
/// # Safety
/// `input` must hold `input_len` doubles and `probabilities`
/// `probabilities_len`.
#[no_mangle]
pub unsafe extern "C" fn hoigen_model_forward(
    model: *const HoigenModel,
    input: *const f64,
    input_len: usize,
    probabilities: *mut f64,
    probabilities_len: usize,
) -> HoigenStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let x = slice(input, input_len, "input")?;
        let out = slice_mut(probabilities, probabilities_len, "probabilities")?;
        if out.len() < m.names.len() {
            return Err(Failure(
                HoigenStatus::BufferTooSmall,
                format!("{} predicates, buffer holds {}", m.names.len(), out.len()),
            ));
        }
        let p = forward(&m.model, x)?;
        out[..p.len()].copy_from_slice(&p);
        Ok(())
    })
}

/// Loads a word-vector table; `expected_dim` 0 accepts any dimension.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. The
/// handle must be released with [`hoigen_embeddings_free`].
#[no_mangle]
pub unsafe extern "C" fn hoigen_embeddings_load(
    path: *const c_char,
    expected_dim: usize,
    out: *mut *mut HoigenEmbeddings,
) -> HoigenStatus {
    guard(|| {
        let path = string(path, "path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let table = load_embeddings(Path::new(path), (expected_dim > 0).then_some(expected_dim))?;
        *out = Box::into_raw(Box::new(HoigenEmbeddings { table }));
        Ok(())
    })
}

/// # Safety
/// `embeddings` must come from [`hoigen_embeddings_load`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn hoigen_embeddings_free(embeddings: *mut HoigenEmbeddings) {
    if !embeddings.is_null() {
        drop(Box::from_raw(embeddings));
    }
}

/// Predicate probabilities for one human-object pair, assembled exactly as
/// at inference time.
///
/// # Safety
/// Handles must be live, `object_class` NUL-terminated, `human_feature`
/// `feature_len` doubles and `probabilities` `probabilities_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hoigen_model_predict(
    model: *const HoigenModel,
    embeddings: *const HoigenEmbeddings,
    human: *const HoigenBox,
    object: *const HoigenBox,
    object_class: *const c_char,
    human_feature: *const f64,
    feature_len: usize,
    width: f64,
    height: f64,
    probabilities: *mut f64,
    probabilities_len: usize,
) -> HoigenStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let e = deref(embeddings, "embeddings")?;
        let h = to_box(deref(human, "human")?)?;
        let o = to_box(deref(object, "object")?)?;
        let class = string(object_class, "object_class")?;
        let f = slice(human_feature, feature_len, "human_feature")?;
        let img = ImageInfo::new("", width, height)?;
        let mut x = assemble_parts(&h, &o, class, f, &e.table, &img, &m.model.human_token)?;
        m.model.ablation.apply(&mut x, e.table.dim());
        let out = slice_mut(probabilities, probabilities_len, "probabilities")?;
        if out.len() < m.names.len() {
            return Err(Failure(
                HoigenStatus::BufferTooSmall,
                format!("{} predicates, buffer holds {}", m.names.len(), out.len()),
            ));
        }
        let p = forward(&m.model, &x)?;
        out[..p.len()].copy_from_slice(&p);
        Ok(())
    })
}
