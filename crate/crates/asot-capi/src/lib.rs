//! C ABI for the `asot` library.
//!
//! Conventions:
//! - Every fallible function returns an [`AsotStatus`]; outputs go through
//!   out-pointers. `ASOT_STATUS_OK` (0) means success.
//! - Objects cross the boundary as opaque handles created by `*_new`/`*_fit`
//!   constructors and released by the matching `*_free`. Passing a handle to
//!   a function of another type is undefined behavior; passing NULL is
//!   checked and reported.
//! - On failure, [`asot_last_error_message`] returns a human-readable
//!   message for the most recent error on the calling thread.
//! - Matrices are row-major `double` buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::CString;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ndarray::{Array1, Array2};

use asot::anchor::{anchor_cost, asot_exact, easot, map_distribution, AnchorMetric, AnchorSpace};
use asot::error::Error;
use asot::kmeans::{encode_onehot, fit_kmeans, KmeansConfig};
use asot::ot::{
    euclidean_cost, sinkhorn, solve_exact, DiscreteDistribution, SinkhornConfig,
};

/// Status codes returned by every fallible entry point. The numeric values
/// match the CLI exit codes for the same failure classes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsotStatus {
    /// Success.
    Ok = 0,
    /// A precondition on the inputs was violated.
    InvalidArgument = 1,
    /// Input data could not be parsed or read.
    DataError = 2,
    /// The computation failed numerically.
    NumericError = 3,
    /// A required pointer argument was NULL.
    NullPointer = 4,
    /// An internal invariant was violated (a bug; the library state is
    /// still consistent).
    InternalError = 5,
}

/// A discrete distribution: weighted points in d-dimensional space.
pub struct AsotDistribution {
    inner: DiscreteDistribution,
}

/// A learned anchor space: k anchor points with a shared metric.
pub struct AsotAnchorSpace {
    inner: AnchorSpace,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let cleaned: String = message.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> AsotStatus {
    match err {
        Error::InvalidArgument(_) => AsotStatus::InvalidArgument,
        Error::Parse { .. } | Error::Io(_) => AsotStatus::DataError,
        Error::Numeric(_) | Error::Infeasible(_) => AsotStatus::NumericError,
    }
}

fn fail(err: &Error) -> AsotStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn null_pointer(what: &str) -> AsotStatus {
    set_last_error(&format!("{what} must not be NULL"));
    AsotStatus::NullPointer
}

/// Runs a closure, translating panics into `InternalError` so unwinding
/// never crosses the FFI boundary.
fn guarded(f: impl FnOnce() -> AsotStatus) -> AsotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            AsotStatus::InternalError
        }
    }
}

/// Returns a pointer to the error message of the most recent failure on the
/// calling thread, or an empty string when no error occurred yet. The
/// pointer stays valid until the next failing call on the same thread; do
/// not free it.
#[no_mangle]
pub extern "C" fn asot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Returns the library version as a static string; do not free it.
#[no_mangle]
pub extern "C" fn asot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a distribution from `n` points of dimension `d` (row-major).
/// `mass` may be NULL for uniform weights; otherwise it holds `n`
/// nonnegative weights which are normalized to sum to one. On success
/// writes a handle to `out`; free it with [`asot_distribution_free`].
///
/// # Safety
/// `samples` must point to `n * d` readable doubles, `mass` to `n` readable
/// doubles when non-NULL, and `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn asot_distribution_new(
    samples: *const f64,
    n: usize,
    d: usize,
    mass: *const f64,
    out: *mut *mut AsotDistribution,
) -> AsotStatus {
    guarded(|| {
        if samples.is_null() {
            return null_pointer("samples");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let Some(len) = n.checked_mul(d) else {
            set_last_error("n * d overflows");
            return AsotStatus::InvalidArgument;
        };
        let flat = slice::from_raw_parts(samples, len).to_vec();
        let points = match Array2::from_shape_vec((n, d), flat) {
            Ok(p) => p,
            Err(e) => {
                set_last_error(&e.to_string());
                return AsotStatus::InvalidArgument;
            }
        };
        let built = if mass.is_null() {
            DiscreteDistribution::uniform(points)
        } else {
            let w = Array1::from_vec(slice::from_raw_parts(mass, n).to_vec());
            DiscreteDistribution::new(points, w)
        };
        match built {
            Ok(dist) => {
                *out = Box::into_raw(Box::new(AsotDistribution { inner: dist }));
                AsotStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a distribution handle; NULL is a no-op.
///
/// # Safety
/// `dist` must be a handle from [`asot_distribution_new`] that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn asot_distribution_free(dist: *mut AsotDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Number of support points, or 0 for NULL.
///
/// # Safety
/// `dist` must be a live distribution handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn asot_distribution_len(dist: *const AsotDistribution) -> usize {
    if dist.is_null() {
        0
    } else {
        (*dist).inner.len()
    }
}

/// Point dimension, or 0 for NULL.
///
/// # Safety
/// `dist` must be a live distribution handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn asot_distribution_dim(dist: *const AsotDistribution) -> usize {
    if dist.is_null() {
        0
    } else {
        (*dist).inner.dim()
    }
}

/// Exact 1-Wasserstein distance between two distributions under the
/// Euclidean ground cost, written to `out`.
///
/// # Safety
/// `dx` and `dy` must be live distribution handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn asot_exact_distance(
    dx: *const AsotDistribution,
    dy: *const AsotDistribution,
    out: *mut f64,
) -> AsotStatus {
    guarded(|| {
        if dx.is_null() || dy.is_null() {
            return null_pointer("dx/dy");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let (dx, dy) = (&(*dx).inner, &(*dy).inner);
        let result = euclidean_cost(dx.samples(), dy.samples())
            .and_then(|c| solve_exact(dx.mass(), dy.mass(), &c));
        match result {
            Ok((_, cost)) => {
                *out = cost;
                AsotStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Entropic 1-Wasserstein distance via Sinkhorn iterations at the given
/// regularization strength, written to `out`.
///
/// # Safety
/// `dx` and `dy` must be live distribution handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn asot_sinkhorn_distance(
    dx: *const AsotDistribution,
    dy: *const AsotDistribution,
    epsilon: f64,
    iterations: usize,
    out: *mut f64,
) -> AsotStatus {
    guarded(|| {
        if dx.is_null() || dy.is_null() {
            return null_pointer("dx/dy");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let cfg = SinkhornConfig {
            epsilon,
            iterations,
            ..SinkhornConfig::default()
        };
        let (dx, dy) = (&(*dx).inner, &(*dy).inner);
        let result = euclidean_cost(dx.samples(), dy.samples())
            .and_then(|c| sinkhorn(dx.mass(), dy.mass(), &c, &cfg));
        match result {
            Ok(res) => {
                *out = res.cost;
                AsotStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Creates an anchor space from `k` anchor points of dimension `d`
/// (row-major) with the Euclidean metric. Free with
/// [`asot_anchor_space_free`].
///
/// # Safety
/// `anchors` must point to `k * d` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn asot_anchor_space_new(
    anchors: *const f64,
    k: usize,
    d: usize,
    out: *mut *mut AsotAnchorSpace,
) -> AsotStatus {
    guarded(|| {
        if anchors.is_null() {
            return null_pointer("anchors");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let Some(len) = k.checked_mul(d) else {
            set_last_error("k * d overflows");
            return AsotStatus::InvalidArgument;
        };
        let flat = slice::from_raw_parts(anchors, len).to_vec();
        let points = match Array2::from_shape_vec((k, d), flat) {
            Ok(p) => p,
            Err(e) => {
                set_last_error(&e.to_string());
                return AsotStatus::InvalidArgument;
            }
        };
        match AnchorSpace::new(points, AnchorMetric::Euclidean) {
            Ok(space) => {
                *out = Box::into_raw(Box::new(AsotAnchorSpace { inner: space }));
                AsotStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Fits `k` anchors to `n` pooled samples of dimension `d` (row-major) with
/// seeded mini-batch k-means. Free the handle with
/// [`asot_anchor_space_free`].
///
/// # Safety
/// `samples` must point to `n * d` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn asot_anchor_space_fit_kmeans(
    samples: *const f64,
    n: usize,
    d: usize,
    k: usize,
    seed: u64,
    out: *mut *mut AsotAnchorSpace,
) -> AsotStatus {
    guarded(|| {
        if samples.is_null() {
            return null_pointer("samples");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let Some(len) = n.checked_mul(d) else {
            set_last_error("n * d overflows");
            return AsotStatus::InvalidArgument;
        };
        let flat = slice::from_raw_parts(samples, len).to_vec();
        let points = match Array2::from_shape_vec((n, d), flat) {
            Ok(p) => p,
            Err(e) => {
                set_last_error(&e.to_string());
                return AsotStatus::InvalidArgument;
            }
        };
        let cfg = KmeansConfig {
            k,
            seed,
            ..KmeansConfig::default()
        };
        match fit_kmeans(&points, &cfg) {
            Ok(space) => {
                *out = Box::into_raw(Box::new(AsotAnchorSpace { inner: space }));
                AsotStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases an anchor-space handle; NULL is a no-op.
///
/// # Safety
/// `space` must be a handle from an anchor-space constructor that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn asot_anchor_space_free(space: *mut AsotAnchorSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Number of anchors, or 0 for NULL.
///
/// # Safety
/// `space` must be a live anchor-space handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn asot_anchor_space_k(space: *const AsotAnchorSpace) -> usize {
    if space.is_null() {
        0
    } else {
        (*space).inner.k()
    }
}

/// Anchor dimension, or 0 for NULL.
///
/// # Safety
/// `space` must be a live anchor-space handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn asot_anchor_space_dim(space: *const AsotAnchorSpace) -> usize {
    if space.is_null() {
        0
    } else {
        (*space).inner.dim()
    }
}

fn anchor_distance_impl(
    space: &AnchorSpace,
    dx: &DiscreteDistribution,
    dy: &DiscreteDistribution,
    entropic: Option<SinkhornConfig>,
) -> Result<f64, Error> {
    let c_s = anchor_cost(space)?;
    let (zx, _) = encode_onehot(dx.samples().view(), space)?;
    let (zy, _) = encode_onehot(dy.samples().view(), space)?;
    let ax = map_distribution(dx, &zx)?;
    let bx = map_distribution(dy, &zy)?;
    match entropic {
        None => asot_exact(&ax, &bx, &c_s),
        Some(cfg) => easot(&ax, &bx, &c_s, &cfg),
    }
}

/// Anchor-space 1-Wasserstein distance: both distributions are encoded onto
/// their nearest anchors and transported exactly under the shared anchor
/// cost. Written to `out`.
///
/// # Safety
/// `space` must be a live anchor-space handle, `dx`/`dy` live distribution
/// handles whose dimension matches the space, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn asot_anchor_distance(
    space: *const AsotAnchorSpace,
    dx: *const AsotDistribution,
    dy: *const AsotDistribution,
    out: *mut f64,
) -> AsotStatus {
    guarded(|| {
        if space.is_null() || dx.is_null() || dy.is_null() {
            return null_pointer("space/dx/dy");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        match anchor_distance_impl(&(*space).inner, &(*dx).inner, &(*dy).inner, None) {
            Ok(cost) => {
                *out = cost;
                AsotStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Entropic variant of [`asot_anchor_distance`] using Sinkhorn iterations on
/// the shared anchor cost.
///
/// # Safety
/// Same as [`asot_anchor_distance`].
#[no_mangle]
pub unsafe extern "C" fn asot_anchor_distance_entropic(
    space: *const AsotAnchorSpace,
    dx: *const AsotDistribution,
    dy: *const AsotDistribution,
    epsilon: f64,
    iterations: usize,
    out: *mut f64,
) -> AsotStatus {
    guarded(|| {
        if space.is_null() || dx.is_null() || dy.is_null() {
            return null_pointer("space/dx/dy");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let cfg = SinkhornConfig {
            epsilon,
            iterations,
            ..SinkhornConfig::default()
        };
        match anchor_distance_impl(&(*space).inner, &(*dx).inner, &(*dy).inner, Some(cfg)) {
            Ok(cost) => {
                *out = cost;
                AsotStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
