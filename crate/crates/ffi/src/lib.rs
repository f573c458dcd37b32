//! C interface to the gausson solver.
//!
//! Handles are opaque pointers created by `*_new`/`gausson_construct` and released with the
//! matching `*_free`. Every fallible call returns a [`GaussonStatus`]; on failure the
//! message is kept per thread and can be copied out with [`gausson_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use gausson::ansatz::PeakSet;
use gausson::grid::{norm_linf, Grid};
use gausson::oracle::pde_residual;
use gausson::peaksolve::{certify_peak_solution, solve_peaks, CertifyConfig, ConstructedSolution, OuterConfig};
use gausson::potential::{Family, PotentialModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The reduction or the outer solve failed.
    Construction = 3,
    Io = 4,
    BufferTooSmall = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussonFamily {
    Constant = 0,
    QuadraticWell = 1,
    MultiWellPolynomial = 2,
    GaussianBumps = 3,
}

impl From<GaussonFamily> for Family {
    fn from(f: GaussonFamily) -> Self {
        match f {
            GaussonFamily::Constant => Family::Constant,
            GaussonFamily::QuadraticWell => Family::QuadraticWell,
            GaussonFamily::MultiWellPolynomial => Family::MultiWellPolynomial,
            GaussonFamily::GaussianBumps => Family::GaussianBumps,
        }
    }
}

/// A potential `V`.
pub struct GaussonModel(PotentialModel);

/// A constructed solution together with its certification outcome.
pub struct GaussonSolution {
    sol: ConstructedSolution,
    certified: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn guard(f: impl FnOnce() -> Result<(), (GaussonStatus, String)>) -> GaussonStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GaussonStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside gausson");
            GaussonStatus::Internal
        }
    }
}

fn null(what: &str) -> (GaussonStatus, String) {
    (GaussonStatus::NullPointer, format!("{what} is null"))
}

fn invalid(e: impl ToString) -> (GaussonStatus, String) {
    (GaussonStatus::InvalidArgument, e.to_string())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated to
/// `len - 1` bytes) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn gausson_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static version string.
#[no_mangle]
pub extern "C" fn gausson_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `params` must point to `nparams` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gausson_model_new(
    family: GaussonFamily,
    params: *const f64,
    nparams: usize,
    dim: usize,
    out: *mut *mut GaussonModel,
) -> GaussonStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if params.is_null() && nparams > 0 {
            return Err(null("params"));
        }
        let p = if nparams == 0 { vec![] } else { slice::from_raw_parts(params, nparams).to_vec() };
        let m = PotentialModel::new(family.into(), p, dim).map_err(invalid)?;
        *out = Box::into_raw(Box::new(GaussonModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`gausson_model_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gausson_model_free(model: *mut GaussonModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `x` must point to `dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gausson_model_value(model: *const GaussonModel, x: *const f64, out: *mut f64) -> GaussonStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if x.is_null() || out.is_null() {
            return Err(null("x or out"));
        }
        let x = slice::from_raw_parts(x, m.0.dim());
        *out = m.0.eval(x).map_err(invalid)?;
        Ok(())
    })
}

/// Constructs a `k`-peak solution concentrating at the given centres (`k * dim` doubles,
/// row-major), on the default grid for `eps`, and certifies it.
///
/// # Safety
/// `centres` must point to `k * dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gausson_construct(
    model: *const GaussonModel,
    eps: f64,
    centres: *const f64,
    k: usize,
    delta: f64,
    out: *mut *mut GaussonSolution,
) -> GaussonStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if centres.is_null() || out.is_null() {
            return Err(null("centres or out"));
        }
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let dim = m.dim();
        let xi: Vec<Vec<f64>> = slice::from_raw_parts(centres, k * dim).chunks(dim).map(|c| c.to_vec()).collect();
        let grid = Grid::for_peaks(dim, eps, &xi).map_err(invalid)?;
        let peaks = PeakSet::at_critical_points(eps, xi, delta).map_err(invalid)?;
        let sol = solve_peaks(&peaks, m, &grid, &OuterConfig::default()).map_err(|e| (GaussonStatus::Construction, e.to_string()))?;
        let certified = certify_peak_solution(&sol, &CertifyConfig::default()).passed();
        *out = Box::into_raw(Box::new(GaussonSolution { sol, certified }));
        Ok(())
    })
}

/// # Safety
/// `solution` must come from [`gausson_construct`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gausson_solution_free(solution: *mut GaussonSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Grid shape: dimension, points per axis, half-width of the box.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gausson_solution_grid(
    solution: *const GaussonSolution,
    dim: *mut usize,
    n: *mut usize,
    half_width: *mut f64,
) -> GaussonStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if dim.is_null() || n.is_null() || half_width.is_null() {
            return Err(null("output pointer"));
        }
        let g = s.sol.u.grid();
        *dim = g.dim();
        *n = g.n();
        *half_width = g.half_width();
        Ok(())
    })
}

/// Copies `u` (row-major, last axis fastest) into `buf`, which must hold `n^dim` doubles.
///
/// # Safety
/// `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gausson_solution_values(solution: *const GaussonSolution, buf: *mut f64, len: usize) -> GaussonStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = &s.sol.u.values;
        if len < v.len() {
            return Err((GaussonStatus::BufferTooSmall, format!("need {} doubles, got {len}", v.len())));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Copies the final peak centres `y_j` (`k * dim` doubles) into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gausson_solution_centres(solution: *const GaussonSolution, buf: *mut f64, len: usize) -> GaussonStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let flat: Vec<f64> = s.sol.peaks.y.iter().flatten().copied().collect();
        if len < flat.len() {
            return Err((GaussonStatus::BufferTooSmall, format!("need {} doubles, got {len}", flat.len())));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
        Ok(())
    })
}

/// Scalar diagnostics of a solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussonSummary {
    pub k: usize,
    pub certified: bool,
    pub outer_iterations: usize,
    pub max_multiplier: f64,
    pub phi_eps_norm: f64,
    pub phi_star_norm: f64,
    /// `|F_h(u)|_∞` of the discrete equation.
    pub residual_inf: f64,
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gausson_solution_summary(solution: *const GaussonSolution, out: *mut GaussonSummary) -> GaussonStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sol = &s.sol;
        *out = GaussonSummary {
            k: sol.peaks.k(),
            certified: s.certified,
            outer_iterations: sol.outer_iterations,
            max_multiplier: sol.max_multiplier(),
            phi_eps_norm: sol.reduction.norms.eps_norm,
            phi_star_norm: sol.reduction.norms.star_norm,
            residual_inf: norm_linf(&pde_residual(&sol.u, sol.peaks.eps, &sol.model, (-40.0f64).exp())),
        };
        Ok(())
    })
}

/// Writes `u` as a binary field file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn gausson_solution_write(solution: *const GaussonSolution, path: *const c_char) -> GaussonStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(invalid)?;
        gausson::io::write_field(Path::new(p), &s.sol.u).map_err(|e| (GaussonStatus::Io, e.to_string()))
    })
}
