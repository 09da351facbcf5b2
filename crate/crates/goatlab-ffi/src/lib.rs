//! C ABI for the goalconditioned-learning laboratory.
//!
//! Handles are opaque heap pointers created and destroyed by this library;
//! every fallible call returns a status code and leaves a human-readable
//! message retrievable with [`goatlab_last_error`]. All functions are safe
//! to call from any single thread; handles must not be shared across
//! threads concurrently.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use goatlab::agents::{Algorithm, TrainConfig, Trainer};
use goatlab::divergence::{verify_uniform_minimax, worst_case_d1, CapFamily, DiscreteDist};
use goatlab::env::{generate_dataset, Dataset, DatasetKind, EnvConfig, Point};
use goatlab::error::Error;
use goatlab::eval::{rollout, NetworkPolicy, Policy};
use goatlab::rng::{derive_seed, stream_rng};
use rand::Rng;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoatlabStatus {
    GoatlabOk = 0,
    /// A null pointer or otherwise unusable argument.
    GoatlabBadArgument = 1,
    /// Rejected configuration or parameter value.
    GoatlabConfigError = 2,
    /// Non-finite arithmetic or a failed numeric invariant.
    GoatlabNumericError = 3,
    /// File system failure.
    GoatlabIoError = 4,
    /// Internal panic captured at the boundary.
    GoatlabPanic = 5,
}

use GoatlabStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(err: &Error) -> GoatlabStatus {
    match err.exit_code() {
        2 => GoatlabConfigError,
        4 => GoatlabIoError,
        _ => GoatlabNumericError,
    }
}

fn run<T>(out: Option<&mut T>, f: impl FnOnce() -> Result<T, (GoatlabStatus, String)>) -> GoatlabStatus {
    let Some(out) = out else {
        set_error("output pointer is null");
        return GoatlabBadArgument;
    };
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(value)) => {
            *out = value;
            GoatlabOk
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GoatlabPanic
        }
    }
}

fn lib_err(err: Error) -> (GoatlabStatus, String) {
    (status_of(&err), err.to_string())
}

/// # Safety
/// `path` must be a valid NUL-terminated string.
unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, (GoatlabStatus, String)> {
    if path.is_null() {
        return Err((GoatlabBadArgument, "path is null".to_string()));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err((GoatlabBadArgument, "path is not valid UTF-8".to_string())),
    }
}

/// Opaque behavior-dataset handle.
pub struct GoatlabDataset {
    inner: Dataset,
}

/// Opaque trained-policy handle.
pub struct GoatlabPolicy {
    inner: NetworkPolicy,
}

/// Copy the most recent error message on this thread into `buf` (always
/// NUL-terminated, truncated to `cap` bytes). Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn goatlab_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn goatlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generate a behavior dataset. `expert` nonzero rolls the optimal policy;
/// zero rolls the reference noisy policy.
///
/// # Safety
/// `out` must be a valid pointer; the returned handle must be released with
/// [`goatlab_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn goatlab_dataset_generate(
    expert: i32,
    n_traj: usize,
    seed: u64,
    out: *mut *mut GoatlabDataset,
) -> GoatlabStatus {
    run(out.as_mut(), || {
        let kind = if expert != 0 {
            DatasetKind::expert(n_traj)
        } else {
            DatasetKind::non_expert(n_traj)
        };
        let inner = generate_dataset(kind, EnvConfig::default(), seed).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(GoatlabDataset { inner })))
    })
}

/// Load a dataset from an NDJSON file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid; release the handle
/// with [`goatlab_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn goatlab_dataset_load(
    path: *const c_char,
    out: *mut *mut GoatlabDataset,
) -> GoatlabStatus {
    run(out.as_mut(), || {
        let path = path_arg(path)?;
        let inner = Dataset::load_ndjson(&path).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(GoatlabDataset { inner })))
    })
}

/// Write a dataset as NDJSON.
///
/// # Safety
/// `ds` must be a live handle from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn goatlab_dataset_save(
    ds: *const GoatlabDataset,
    path: *const c_char,
) -> GoatlabStatus {
    let mut unit = ();
    run(Some(&mut unit), || {
        let Some(ds) = ds.as_ref() else {
            return Err((GoatlabBadArgument, "dataset handle is null".to_string()));
        };
        let path = path_arg(path)?;
        ds.inner.save_ndjson(&path).map_err(lib_err)
    })
}

/// Number of transitions in the dataset.
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn goatlab_dataset_len(
    ds: *const GoatlabDataset,
    out: *mut usize,
) -> GoatlabStatus {
    run(out.as_mut(), || {
        let Some(ds) = ds.as_ref() else {
            return Err((GoatlabBadArgument, "dataset handle is null".to_string()));
        };
        Ok(ds.inner.n_transitions())
    })
}

/// Release a dataset handle. Null is a no-op.
///
/// # Safety
/// `ds` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn goatlab_dataset_free(ds: *mut GoatlabDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Train `algo` (by name: bc, gcsl, marwil_her, wgcsl, goat, goat_tau,
/// ddpg_her, cql_her) on the dataset for `updates` gradient steps (0 keeps
/// the algorithm's preset budget) and return the trained policy.
///
/// # Safety
/// `ds` must be a live handle; `algo` NUL-terminated; `out` valid; release
/// the policy with [`goatlab_policy_free`].
#[no_mangle]
pub unsafe extern "C" fn goatlab_train(
    algo: *const c_char,
    ds: *const GoatlabDataset,
    seed: u64,
    updates: u64,
    out: *mut *mut GoatlabPolicy,
) -> GoatlabStatus {
    run(out.as_mut(), || {
        let Some(ds) = ds.as_ref() else {
            return Err((GoatlabBadArgument, "dataset handle is null".to_string()));
        };
        if algo.is_null() {
            return Err((GoatlabBadArgument, "algorithm name is null".to_string()));
        }
        let name = CStr::from_ptr(algo)
            .to_str()
            .map_err(|_| (GoatlabBadArgument, "algorithm name is not valid UTF-8".to_string()))?;
        let algorithm = Algorithm::from_name(name).map_err(lib_err)?;
        let mut cfg = TrainConfig::preset(algorithm, seed);
        if updates > 0 {
            cfg.total_updates = updates;
        }
        let mut trainer = Trainer::new(ds.inner.clone(), cfg).map_err(lib_err)?;
        trainer.train(None).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(GoatlabPolicy { inner: trainer.policy() })))
    })
}

/// Load a policy from its single-file container.
///
/// # Safety
/// `path` NUL-terminated; `out` valid; release with [`goatlab_policy_free`].
#[no_mangle]
pub unsafe extern "C" fn goatlab_policy_load(
    path: *const c_char,
    out: *mut *mut GoatlabPolicy,
) -> GoatlabStatus {
    run(out.as_mut(), || {
        let path = path_arg(path)?;
        let inner = NetworkPolicy::load_file(&path).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(GoatlabPolicy { inner })))
    })
}

/// Save a policy to its single-file container.
///
/// # Safety
/// `policy` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn goatlab_policy_save(
    policy: *const GoatlabPolicy,
    path: *const c_char,
) -> GoatlabStatus {
    let mut unit = ();
    run(Some(&mut unit), || {
        let Some(policy) = policy.as_ref() else {
            return Err((GoatlabBadArgument, "policy handle is null".to_string()));
        };
        let path = path_arg(path)?;
        policy.inner.save_file(&path).map_err(lib_err)
    })
}

/// Evaluate the policy's action at a state and goal. Components are written
/// to `out_ax` and `out_ay`; both lie within the action bound.
///
/// # Safety
/// `policy` must be a live handle; both output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn goatlab_policy_act(
    policy: *const GoatlabPolicy,
    sx: f64,
    sy: f64,
    gx: f64,
    gy: f64,
    out_ax: *mut f64,
    out_ay: *mut f64,
) -> GoatlabStatus {
    if out_ay.is_null() {
        set_error("output pointer is null");
        return GoatlabBadArgument;
    }
    let out_ay = &mut *out_ay;
    run(out_ax.as_mut(), || {
        let Some(policy) = policy.as_ref() else {
            return Err((GoatlabBadArgument, "policy handle is null".to_string()));
        };
        for v in [sx, sy, gx, gy] {
            if !v.is_finite() {
                return Err((GoatlabNumericError, format!("non-finite input {v}")));
            }
        }
        let a: Point = policy.inner.act([sx, sy], [gx, gy]);
        *out_ay = a[1];
        Ok(a[0])
    })
}

/// Success rate of the policy over `n_goals` goals drawn uniformly on the
/// circle of the given radius, episodes starting at the origin.
///
/// # Safety
/// `policy` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn goatlab_policy_success_rate(
    policy: *const GoatlabPolicy,
    radius: f64,
    n_goals: usize,
    seed: u64,
    out: *mut f64,
) -> GoatlabStatus {
    run(out.as_mut(), || {
        let Some(policy) = policy.as_ref() else {
            return Err((GoatlabBadArgument, "policy handle is null".to_string()));
        };
        if !(radius > 0.0) || !radius.is_finite() {
            return Err((GoatlabConfigError, format!("radius must be positive, got {radius}")));
        }
        if n_goals == 0 {
            return Err((GoatlabConfigError, "n_goals must be at least 1".to_string()));
        }
        let env = EnvConfig::default();
        let mut rng = stream_rng(derive_seed(seed, radius.to_bits()), 0xFF1);
        let mut successes = 0usize;
        for _ in 0..n_goals {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let goal = [radius * theta.cos(), radius * theta.sin()];
            if rollout(&env, &policy.inner, goal).success {
                successes += 1;
            }
        }
        Ok(successes as f64 / n_goals as f64)
    })
}

/// Release a policy handle. Null is a no-op.
///
/// # Safety
/// `policy` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn goatlab_policy_free(policy: *mut GoatlabPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Worst-case variation divergence from the distribution `probs[0..n]` to
/// the family of distributions with per-outcome probability at most `cap`.
///
/// # Safety
/// `probs` must point to `n` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn goatlab_worst_case_shift(
    probs: *const f64,
    n: usize,
    cap: f64,
    out: *mut f64,
) -> GoatlabStatus {
    run(out.as_mut(), || {
        if probs.is_null() {
            return Err((GoatlabBadArgument, "probability array is null".to_string()));
        }
        let p = std::slice::from_raw_parts(probs, n).to_vec();
        let dist = DiscreteDist::new(p).map_err(lib_err)?;
        let family = CapFamily::new(n, cap).map_err(lib_err)?;
        worst_case_d1(&dist, &family).map_err(lib_err)
    })
}

/// Check that the uniform distribution minimizes the worst-case shift over
/// `trials` random competitors. Writes the smallest observed margin; a
/// positive margin means the property held everywhere.
///
/// # Safety
/// `out_min_margin` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn goatlab_verify_minimax(
    n: usize,
    cap: f64,
    trials: usize,
    seed: u64,
    out_min_margin: *mut f64,
) -> GoatlabStatus {
    run(out_min_margin.as_mut(), || {
        let report = verify_uniform_minimax(n, cap, trials, seed).map_err(lib_err)?;
        if report.passed() {
            Ok(report.min_margin)
        } else {
            Err((
                GoatlabNumericError,
                format!("minimax property violated in {} trials", report.failures.len()),
            ))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn last_error() -> String {
        let mut buf = vec![0u8; 256];
        let n = unsafe { goatlab_last_error(buf.as_mut_ptr().cast(), buf.len()) };
        let n = n.min(buf.len() - 1);
        String::from_utf8_lossy(&buf[..n]).into_owned()
    }

    #[test]
    fn version_is_a_static_c_string() {
        let v = unsafe { CStr::from_ptr(goatlab_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn dataset_generate_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("d.ndjson").to_str().unwrap()).unwrap();
        let mut ds: *mut GoatlabDataset = ptr::null_mut();
        assert_eq!(unsafe { goatlab_dataset_generate(1, 3, 7, &mut ds) }, GoatlabOk);
        let mut len = 0usize;
        assert_eq!(unsafe { goatlab_dataset_len(ds, &mut len) }, GoatlabOk);
        assert_eq!(len, 150, "3 trajectories of 50 transitions");
        assert_eq!(unsafe { goatlab_dataset_save(ds, path.as_ptr()) }, GoatlabOk);
        let mut ds2: *mut GoatlabDataset = ptr::null_mut();
        assert_eq!(unsafe { goatlab_dataset_load(path.as_ptr(), &mut ds2) }, GoatlabOk);
        let mut len2 = 0usize;
        assert_eq!(unsafe { goatlab_dataset_len(ds2, &mut len2) }, GoatlabOk);
        assert_eq!(len2, len);
        unsafe {
            goatlab_dataset_free(ds);
            goatlab_dataset_free(ds2);
        }
    }

    #[test]
    fn null_arguments_set_readable_errors() {
        let mut len = 0usize;
        assert_eq!(unsafe { goatlab_dataset_len(ptr::null(), &mut len) }, GoatlabBadArgument);
        assert!(last_error().contains("null"), "got {:?}", last_error());
        let mut ds: *mut GoatlabDataset = ptr::null_mut();
        let status = unsafe { goatlab_dataset_load(ptr::null(), &mut ds) };
        assert_eq!(status, GoatlabBadArgument);
        assert_eq!(unsafe { goatlab_dataset_generate(1, 3, 7, ptr::null_mut()) }, GoatlabBadArgument);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let path = CString::new("/nonexistent/never/d.ndjson").unwrap();
        let mut ds: *mut GoatlabDataset = ptr::null_mut();
        assert_eq!(unsafe { goatlab_dataset_load(path.as_ptr(), &mut ds) }, GoatlabIoError);
        assert!(ds.is_null());
    }

    #[test]
    fn train_act_and_success_rate() {
        let mut ds: *mut GoatlabDataset = ptr::null_mut();
        assert_eq!(unsafe { goatlab_dataset_generate(1, 5, 3, &mut ds) }, GoatlabOk);
        let algo = CString::new("bc").unwrap();
        let mut policy: *mut GoatlabPolicy = ptr::null_mut();
        assert_eq!(unsafe { goatlab_train(algo.as_ptr(), ds, 0, 300, &mut policy) }, GoatlabOk);
        let (mut ax, mut ay) = (f64::NAN, f64::NAN);
        assert_eq!(
            unsafe { goatlab_policy_act(policy, 0.0, 0.0, 8.0, 5.0, &mut ax, &mut ay) },
            GoatlabOk
        );
        assert!(ax.abs() <= 1.0 && ay.abs() <= 1.0, "action exceeds bound: {ax}, {ay}");
        let mut rate = -1.0;
        assert_eq!(
            unsafe { goatlab_policy_success_rate(policy, 10.0, 20, 0, &mut rate) },
            GoatlabOk
        );
        assert!((0.0..=1.0).contains(&rate), "rate out of range: {rate}");
        unsafe {
            goatlab_policy_free(policy);
            goatlab_dataset_free(ds);
        }
    }

    #[test]
    fn unknown_algorithm_is_a_config_error() {
        let mut ds: *mut GoatlabDataset = ptr::null_mut();
        assert_eq!(unsafe { goatlab_dataset_generate(1, 2, 0, &mut ds) }, GoatlabOk);
        let algo = CString::new("nonsense").unwrap();
        let mut policy: *mut GoatlabPolicy = ptr::null_mut();
        assert_eq!(
            unsafe { goatlab_train(algo.as_ptr(), ds, 0, 10, &mut policy) },
            GoatlabConfigError
        );
        assert!(last_error().contains("nonsense"), "got {:?}", last_error());
        unsafe { goatlab_dataset_free(ds) };
    }

    #[test]
    fn policy_file_round_trip_preserves_actions() {
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("p.bin").to_str().unwrap()).unwrap();
        let mut ds: *mut GoatlabDataset = ptr::null_mut();
        unsafe { goatlab_dataset_generate(0, 3, 11, &mut ds) };
        let algo = CString::new("gcsl").unwrap();
        let mut policy: *mut GoatlabPolicy = ptr::null_mut();
        assert_eq!(unsafe { goatlab_train(algo.as_ptr(), ds, 1, 50, &mut policy) }, GoatlabOk);
        assert_eq!(unsafe { goatlab_policy_save(policy, path.as_ptr()) }, GoatlabOk);
        let mut policy2: *mut GoatlabPolicy = ptr::null_mut();
        assert_eq!(unsafe { goatlab_policy_load(path.as_ptr(), &mut policy2) }, GoatlabOk);
        let (mut ax1, mut ay1) = (0.0, 0.0);
        let (mut ax2, mut ay2) = (0.0, 0.0);
        unsafe {
            goatlab_policy_act(policy, 1.0, -2.0, 3.0, 4.0, &mut ax1, &mut ay1);
            goatlab_policy_act(policy2, 1.0, -2.0, 3.0, 4.0, &mut ax2, &mut ay2);
        }
        assert_eq!((ax1, ay1), (ax2, ay2), "loaded policy must act identically");
        unsafe {
            goatlab_policy_free(policy);
            goatlab_policy_free(policy2);
            goatlab_dataset_free(ds);
        }
    }

    #[test]
    fn worst_case_shift_matches_the_uniform_closed_form() {
        let probs = [0.25f64; 4];
        let mut wc = 0.0;
        assert_eq!(
            unsafe { goatlab_worst_case_shift(probs.as_ptr(), 4, 0.5, &mut wc) },
            GoatlabOk
        );
        assert!((wc - 1.0).abs() < 1e-12, "2(1 - 1/(0.5*4)) = 1, got {wc}");
    }

    #[test]
    fn verify_minimax_reports_a_positive_margin() {
        let mut margin = -1.0;
        assert_eq!(unsafe { goatlab_verify_minimax(4, 0.5, 100, 5, &mut margin) }, GoatlabOk);
        assert!(margin > 0.0, "uniform must be strictly optimal, margin {margin}");
    }

    #[test]
    fn degenerate_cap_is_rejected() {
        let mut margin = 0.0;
        assert_eq!(
            unsafe { goatlab_verify_minimax(4, 0.2, 10, 0, &mut margin) },
            GoatlabConfigError
        );
    }
}
