//! C ABI over the dehazing library.
//!
//! Images cross the boundary as planar `float` buffers (`C×H×W`, row-major,
//! values in `[0, 1]`). Every fallible call returns an [`HzStatus`]; on a
//! non-zero status [`hz_last_error_message`] describes the failure for the
//! calling thread. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hazenet::cost::{count_cost, CostModule};
use hazenet::eval::dehaze_image;
use hazenet::hazegen::{synthesize_hazy, HazeParams, Scene};
use hazenet::metrics::{psnr, ssim};
use hazenet::{Error, HazeNet, Init, ModelConfig, ParamStore, Tensor};

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Internal = 6,
    Panic = 7,
}

/// A loaded network and its weights. Opaque to C.
pub struct HzModel {
    net: HazeNet,
    store: ParamStore<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> HzStatus {
    match err {
        Error::Shape { .. } | Error::ReflectPad { .. } | Error::SpatialDivisibility { .. } => HzStatus::Shape,
        Error::InvalidArgument(_) | Error::Config(_) | Error::TransmissionFloor { .. } => HzStatus::InvalidArgument,
        Error::Io(_) | Error::MissingData(_) => HzStatus::Io,
        Error::Format { .. } => HzStatus::Format,
        _ => HzStatus::Internal,
    }
}

struct Failure(HzStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HzStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            HzStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside hazenet");
            HzStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HzStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HzStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn read_image(p: *const f32, channels: usize, h: usize, w: usize, what: &str) -> Result<Tensor<f32>, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let len = channels * h * w;
    if len == 0 {
        return Err(Failure(HzStatus::Shape, format!("{what} has an empty extent")));
    }
    let data = std::slice::from_raw_parts(p, len).to_vec();
    Ok(Tensor::from_vec(vec![channels, h, w], data)?)
}

unsafe fn write_out(dst: *mut f32, src: &Tensor<f32>) {
    ptr::copy_nonoverlapping(src.data().as_ptr(), dst, src.len());
}

/// Loads a checkpoint written by the training tools.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hz_model_load(path: *const c_char, out: *mut *mut HzModel) -> HzStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = read_str(path, "path")?;
        if !std::path::Path::new(path).is_file() {
            return Err(Error::MissingData(format!("checkpoint {path} does not exist")).into());
        }
        let (net, store) = HazeNet::load(path)?;
        *out = Box::into_raw(Box::new(HzModel { net, store }));
        Ok(())
    })
}

/// Builds a freshly initialized model from a preset (`"desk"`, `"tiny"` or `"full"`).
/// With `zero_init` set every weight is zero and the model is the identity map.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hz_model_new(preset: *const c_char, seed: u64, zero_init: bool, out: *mut *mut HzModel) -> HzStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ModelConfig::preset(read_str(preset, "preset")?)?;
        let init = if zero_init { Init::Zeros } else { Init::Uniform };
        let (net, store) = HazeNet::init::<f32>(cfg, seed, init)?;
        *out = Box::into_raw(Box::new(HzModel { net, store }));
        Ok(())
    })
}

/// Releases a model. Passing null is a no-op.
///
/// # Safety
/// `model` must come from `hz_model_load`/`hz_model_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hz_model_free(model: *mut HzModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters held by the model (0 for null).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hz_model_param_count(model: *const HzModel) -> u64 {
    model.as_ref().map_or(0, |m| m.store.num_elements() as u64)
}

/// Dehazes a `3×height×width` image of any size.
///
/// `out_final` and `out_pseudo` receive `3·height·width` floats and
/// `out_density` receives `height·width`; the last two may be null. A model
/// without a density module fills `out_density` with ones.
///
/// # Safety
/// All non-null buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hz_model_dehaze(
    model: *const HzModel,
    input: *const f32,
    height: usize,
    width: usize,
    out_final: *mut f32,
    out_pseudo: *mut f32,
    out_density: *mut f32,
) -> HzStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_final.is_null() {
            return Err(null("out_final"));
        }
        let img = read_image(input, 3, height, width, "input")?;
        let res = dehaze_image(&m.net, &m.store, &img)?;
        write_out(out_final, &res.final_image);
        if !out_pseudo.is_null() {
            write_out(out_pseudo, &res.pseudo);
        }
        if !out_density.is_null() {
            match &res.density {
                Some(d) => write_out(out_density, d),
                None => std::slice::from_raw_parts_mut(out_density, height * width).fill(1.0),
            }
        }
        Ok(())
    })
}

/// Applies `I = J·t + A·(1 − t)` with `t = exp(−beta·depth)`.
///
/// `clean` and `out_hazy` hold `3·height·width` floats, `depth` and the
/// optional `out_transmission` hold `height·width`.
///
/// # Safety
/// All non-null buffers must be valid for the stated lengths.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hz_synthesize_hazy(
    clean: *const f32,
    depth: *const f32,
    height: usize,
    width: usize,
    airlight: *const f32,
    beta: f32,
    out_hazy: *mut f32,
    out_transmission: *mut f32,
) -> HzStatus {
    guard(|| {
        if airlight.is_null() {
            return Err(null("airlight"));
        }
        if out_hazy.is_null() {
            return Err(null("out_hazy"));
        }
        let scene = Scene {
            clean: read_image(clean, 3, height, width, "clean")?,
            depth: read_image(depth, 1, height, width, "depth")?,
        };
        let a = std::slice::from_raw_parts(airlight, 3);
        let pair = synthesize_hazy(&scene, HazeParams::new([a[0], a[1], a[2]], beta)?)?;
        write_out(out_hazy, &pair.hazy);
        if !out_transmission.is_null() {
            write_out(out_transmission, &pair.transmission);
        }
        Ok(())
    })
}

/// PSNR in dB with peak 1; identical inputs give `+inf`.
///
/// # Safety
/// `a` and `b` must hold `channels·height·width` floats and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hz_psnr(
    a: *const f32,
    b: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> HzStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let x = read_image(a, channels, height, width, "a")?;
        let y = read_image(b, channels, height, width, "b")?;
        *out = psnr(&x, &y, 1.0)?;
        Ok(())
    })
}

/// Mean SSIM of the channel-mean grayscale images (11×11 Gaussian window).
///
/// # Safety
/// `a` and `b` must hold `channels·height·width` floats and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hz_ssim(
    a: *const f32,
    b: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> HzStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let x = read_image(a, channels, height, width, "a")?;
        let y = read_image(b, channels, height, width, "b")?;
        *out = ssim(&x, &y)?;
        Ok(())
    })
}

/// Parameter and FLOP counts for `module` (`sha`, `se`, `fa`, `mhab`, `mhac`, `full`).
///
/// # Safety
/// `module` must be a NUL-terminated string; `params` and `flops` may be null.
#[no_mangle]
pub unsafe extern "C" fn hz_count_params(
    module: *const c_char,
    channels: usize,
    height: usize,
    width: usize,
    params: *mut u64,
    flops: *mut u64,
) -> HzStatus {
    guard(|| {
        let module: CostModule = read_str(module, "module")?.parse()?;
        let report = count_cost(module, channels, height, width)?;
        if !params.is_null() {
            *params = report.params as u64;
        }
        if !flops.is_null() {
            *flops = report.flops;
        }
        Ok(())
    })
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next `hz_*` call on the same thread.
#[no_mangle]
pub extern "C" fn hz_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
