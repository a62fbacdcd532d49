//! C interface to `prime-core`.
//!
//! Cubes and unmixing results are opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns
//! a [`PrimeStatus`]; on failure [`prime_last_error`] describes the cause for
//! the calling thread. Matrices cross the boundary as row-major `double`
//! buffers supplied by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use prime_core::mixmodel::{AbundanceMatrix, EndmemberMatrix, ImageCube};
use prime_core::prism::LayoutMode;
use prime_core::protocol::read_cube;
use prime_core::solver::{nmf_baseline, prime, vca_baseline, PrimeConfig};
use prime_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Shapes of the inputs disagree with each other or with the buffer length.
    Dimension = 3,
    /// Ill-conditioned data, degenerate geometry or a diverged solver.
    Numerical = 4,
    Io = 5,
    Format = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimeMethod {
    Prime = 0,
    Vca = 1,
    Nmf = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimeLayout {
    Auto = 0,
    Valid = 1,
    Same = 2,
}

/// Solver settings. Obtain defaults from [`prime_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PrimeOptions {
    pub sources: usize,
    pub seed: u64,
    pub gamma: usize,
    pub p: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub outer: usize,
    pub epochs_first: usize,
    pub epochs_rest: usize,
    pub lr: f64,
    pub eta: f64,
    pub r: f64,
    pub hi: bool,
    pub ss: bool,
    pub cg: bool,
    pub layout: PrimeLayout,
    pub nmf_iters: usize,
    /// Relative virtual-cube change that ends the iterations early; 0 disables.
    pub early_stop: f64,
}

impl From<&PrimeOptions> for PrimeConfig {
    fn from(o: &PrimeOptions) -> Self {
        PrimeConfig {
            n: o.sources,
            gamma: o.gamma,
            p: o.p,
            lambda: o.lambda,
            alpha: o.alpha,
            outer: o.outer,
            epochs_first: o.epochs_first,
            epochs_rest: o.epochs_rest,
            lr: o.lr,
            eta: o.eta,
            r: o.r,
            seed: o.seed,
            hi: o.hi,
            ss: o.ss,
            cg: o.cg,
            layout: match o.layout {
                PrimeLayout::Auto => LayoutMode::Auto,
                PrimeLayout::Valid => LayoutMode::Valid,
                PrimeLayout::Same => LayoutMode::Same,
            },
            nmf_iters: o.nmf_iters,
            early_stop: (o.early_stop > 0.0).then_some(o.early_stop),
        }
    }
}

/// A `bands x height x width` band-sequential cube.
pub struct PrimeCube(ImageCube);

/// Endmembers (`bands x sources`) and abundances (`sources x pixels`).
pub struct PrimeUnmixing {
    endmembers: EndmemberMatrix,
    abundances: AbundanceMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(err: &Error) -> PrimeStatus {
    match err {
        Error::InvalidArgument(_) => PrimeStatus::InvalidArgument,
        Error::Shape { .. } | Error::Dimension { .. } => PrimeStatus::Dimension,
        Error::Io { .. } => PrimeStatus::Io,
        Error::Format { .. } | Error::Json(_) | Error::Csv(_) => PrimeStatus::Format,
        Error::Iteration { source, .. } => status_of(source),
        Error::NonFinite(_)
        | Error::Conditioning(_)
        | Error::DegenerateGeometry(_)
        | Error::RankDeficient(_)
        | Error::Diverged { .. } => PrimeStatus::Numerical,
    }
}

/// Runs `f`, recording its error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (PrimeStatus, String)>) -> PrimeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PrimeStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            PrimeStatus::Internal
        }
    }
}

fn core(err: Error) -> (PrimeStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (PrimeStatus, String) {
    (PrimeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PrimeStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn copy_out(src: impl Iterator<Item = f64>, count: usize, out: *mut f64, len: usize) -> Result<(), (PrimeStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len != count {
        return Err((
            PrimeStatus::Dimension,
            format!("output buffer holds {len} values, {count} required"),
        ));
    }
    let dst = std::slice::from_raw_parts_mut(out, len);
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s;
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn prime_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn prime_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn prime_options_default(sources: usize) -> PrimeOptions {
    let c = PrimeConfig::new(sources);
    PrimeOptions {
        sources,
        seed: c.seed,
        gamma: c.gamma,
        p: c.p,
        lambda: c.lambda,
        alpha: c.alpha,
        outer: c.outer,
        epochs_first: c.epochs_first,
        epochs_rest: c.epochs_rest,
        lr: c.lr,
        eta: c.eta,
        r: c.r,
        hi: c.hi,
        ss: c.ss,
        cg: c.cg,
        layout: PrimeLayout::Auto,
        nmf_iters: c.nmf_iters,
        early_stop: 0.0,
    }
}

/// Copies `bands * height * width` band-sequential values into a new cube.
///
/// # Safety
/// `data` must point to `len` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prime_cube_new(
    bands: usize,
    height: usize,
    width: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut PrimeCube,
) -> PrimeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if data.is_null() {
            return Err(null("data"));
        }
        if bands.checked_mul(height).and_then(|v| v.checked_mul(width)) != Some(len) {
            return Err((
                PrimeStatus::Dimension,
                format!("{len} values for a {bands}x{height}x{width} cube"),
            ));
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let cube = ImageCube::new(bands, height, width, values).map_err(core)?;
        *out = Box::into_raw(Box::new(PrimeCube(cube)));
        Ok(())
    })
}

/// Reads a cube written by the `prime` tool from `<base>.json` / `<base>.bin`.
///
/// # Safety
/// `base` must be a NUL-terminated UTF-8 path and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prime_cube_read(base: *const c_char, out: *mut *mut PrimeCube) -> PrimeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if base.is_null() {
            return Err(null("base"));
        }
        let path = CStr::from_ptr(base)
            .to_str()
            .map_err(|_| (PrimeStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
        let cube = read_cube(Path::new(path)).map_err(core)?;
        *out = Box::into_raw(Box::new(PrimeCube(cube)));
        Ok(())
    })
}

/// # Safety
/// `cube` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn prime_cube_dims(
    cube: *const PrimeCube,
    bands: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> PrimeStatus {
    guard(|| {
        let c = &deref(cube, "cube")?.0;
        for (p, v) in [(bands, c.bands()), (height, c.height()), (width, c.width())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `cube` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prime_cube_free(cube: *mut PrimeCube) {
    if !cube.is_null() {
        drop(Box::from_raw(cube));
    }
}

/// Unmixes a multispectral cube. `options` may be null for
/// `prime_options_default(sources)`.
///
/// # Safety
/// `cube` must be a live handle, `options` null or readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn prime_unmix(
    cube: *const PrimeCube,
    method: PrimeMethod,
    sources: usize,
    options: *const PrimeOptions,
    out: *mut *mut PrimeUnmixing,
) -> PrimeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let zm = &deref(cube, "cube")?.0;
        let opts = options.as_ref().copied().unwrap_or_else(|| prime_options_default(sources));
        let mut cfg = PrimeConfig::from(&opts);
        cfg.n = sources;
        let (endmembers, abundances) = match method {
            PrimeMethod::Prime => {
                let r = prime(zm, &cfg).map_err(core)?;
                (r.endmembers, r.abundances)
            }
            PrimeMethod::Vca => vca_baseline(zm, sources, cfg.seed).map_err(core)?,
            PrimeMethod::Nmf => nmf_baseline(zm, &cfg).map_err(core)?,
        };
        *out = Box::into_raw(Box::new(PrimeUnmixing { endmembers, abundances }));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn prime_unmixing_dims(
    result: *const PrimeUnmixing,
    bands: *mut usize,
    sources: *mut usize,
    pixels: *mut usize,
) -> PrimeStatus {
    guard(|| {
        let r = deref(result, "result")?;
        for (p, v) in [
            (bands, r.endmembers.bands()),
            (sources, r.endmembers.sources()),
            (pixels, r.abundances.pixels()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the `bands x sources` endmember matrix, row-major.
///
/// # Safety
/// `result` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn prime_unmixing_endmembers(
    result: *const PrimeUnmixing,
    out: *mut f64,
    len: usize,
) -> PrimeStatus {
    guard(|| {
        let b = deref(result, "result")?.endmembers.matrix();
        copy_out(b.transpose().iter().copied(), b.len(), out, len)
    })
}

/// Copies the `sources x pixels` abundance matrix, row-major.
///
/// # Safety
/// `result` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn prime_unmixing_abundances(
    result: *const PrimeUnmixing,
    out: *mut f64,
    len: usize,
) -> PrimeStatus {
    guard(|| {
        let s = deref(result, "result")?.abundances.matrix();
        copy_out(s.transpose().iter().copied(), s.len(), out, len)
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prime_unmixing_free(result: *mut PrimeUnmixing) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
