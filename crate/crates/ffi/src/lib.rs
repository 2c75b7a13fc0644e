//! C ABI over the solver.
//!
//! Every function returns a [`SpinvmcStatus`]; results come back through out
//! pointers. On failure a message is kept per thread and can be read with
//! [`spinvmc_last_error`]. Models are opaque handles released with
//! [`spinvmc_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use spinvmc::ansatz::{init_params, NetworkParams, ParticleConfiguration};
use spinvmc::diff::Wavefunction;
use spinvmc::models::Hamiltonian;
use spinvmc::runner::{self, Checkpoint, RunConfig, TrainOptions};
use spinvmc::VmcError;

/// Status codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpinvmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Config = 3,
    Numerical = 4,
    Dimension = 5,
    Unsupported = 6,
    Io = 7,
    Checkpoint = 8,
    DegenerateAmplitude = 9,
    Panic = 10,
}

/// A network with its Hamiltonian, ready for evaluation.
pub struct SpinvmcModel {
    config: RunConfig,
    params: NetworkParams,
    hamiltonian: Hamiltonian,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &VmcError) -> SpinvmcStatus {
    match e {
        VmcError::Config(_) => SpinvmcStatus::Config,
        VmcError::Numerical(_) => SpinvmcStatus::Numerical,
        VmcError::Dimension(_) => SpinvmcStatus::Dimension,
        VmcError::Unsupported(_) => SpinvmcStatus::Unsupported,
        VmcError::Io(_) => SpinvmcStatus::Io,
        VmcError::Checkpoint(_) => SpinvmcStatus::Checkpoint,
        VmcError::DegenerateAmplitude => SpinvmcStatus::DegenerateAmplitude,
    }
}

struct Failure(SpinvmcStatus, String);

impl From<VmcError> for Failure {
    fn from(e: VmcError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic for [`spinvmc_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpinvmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpinvmcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpinvmcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SpinvmcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SpinvmcStatus::InvalidString, format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const SpinvmcModel) -> Result<&'a SpinvmcModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn configuration(
    model: &SpinvmcModel,
    positions: *const f64,
    spins: *const i8,
) -> Result<ParticleConfiguration, Failure> {
    if positions.is_null() {
        return Err(null("positions"));
    }
    if spins.is_null() {
        return Err(null("spins"));
    }
    let n = model.config.n_electrons;
    let flat = std::slice::from_raw_parts(positions, 2 * n);
    let pos = flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
    let spins = std::slice::from_raw_parts(spins, n).to_vec();
    Ok(ParticleConfiguration::new(model.params.geometry().cell, pos, spins)?)
}

fn build_model(config: RunConfig, params: NetworkParams) -> Result<SpinvmcModel, Failure> {
    let hamiltonian = Hamiltonian::new(config.hamiltonian_spec()?)?;
    Ok(SpinvmcModel { config, params, hamiltonian })
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spinvmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn spinvmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a model from a TOML config, with parameters initialized from its seed.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_model_new(config_toml: *const c_char, out: *mut *mut SpinvmcModel) -> SpinvmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = RunConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        config.validate()?;
        let params = init_params(&config.geometry()?, config.seed)?;
        *out = Box::into_raw(Box::new(build_model(config, params)?));
        Ok(())
    })
}

/// Creates a model holding the parameters saved in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_model_from_checkpoint(
    path: *const c_char,
    out: *mut *mut SpinvmcModel,
) -> SpinvmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        let config = RunConfig::from_toml(&ckpt.config_toml)?;
        *out = Box::into_raw(Box::new(build_model(config, ckpt.params)?));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_model_free(model: *mut SpinvmcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of electrons the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_model_n_electrons(model: *const SpinvmcModel, out: *mut usize) -> SpinvmcStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.config.n_electrons;
        Ok(())
    })
}

/// Number of variational parameters.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_model_n_params(model: *const SpinvmcModel, out: *mut usize) -> SpinvmcStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.params.len();
        Ok(())
    })
}

/// Copies the parameters into `buf`, which must hold `n_params` doubles.
///
/// # Safety
/// `model` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_model_params(model: *const SpinvmcModel, buf: *mut f64, len: usize) -> SpinvmcStatus {
    guard(|| {
        let m = model_ref(model)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != m.params.len() {
            return Err(Failure(
                SpinvmcStatus::Dimension,
                format!("buffer holds {len} values, model has {}", m.params.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(m.params.as_slice());
        Ok(())
    })
}

/// `log|Ψ|` and the phase of `Ψ` at one configuration. `positions` holds
/// `x₀, y₀, x₁, y₁, …` and `spins` holds ±1 per electron.
///
/// # Safety
/// `model` must be a live handle; `positions` must hold `2N` doubles and
/// `spins` `N` bytes; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_model_log_psi(
    model: *const SpinvmcModel,
    positions: *const f64,
    spins: *const i8,
    log_abs: *mut f64,
    phase: *mut f64,
) -> SpinvmcStatus {
    guard(|| {
        let m = model_ref(model)?;
        if log_abs.is_null() || phase.is_null() {
            return Err(null("output"));
        }
        let c = configuration(m, positions, spins)?;
        let lp = m.params.log_psi(&c)?;
        *log_abs = lp.log_abs;
        *phase = lp.phase;
        Ok(())
    })
}

/// Complex local energy `(HΨ)/Ψ` at one configuration.
///
/// # Safety
/// As for [`spinvmc_model_log_psi`].
#[no_mangle]
pub unsafe extern "C" fn spinvmc_model_local_energy(
    model: *const SpinvmcModel,
    positions: *const f64,
    spins: *const i8,
    re: *mut f64,
    im: *mut f64,
) -> SpinvmcStatus {
    guard(|| {
        let m = model_ref(model)?;
        if re.is_null() || im.is_null() {
            return Err(null("output"));
        }
        let c = configuration(m, positions, spins)?;
        let e = m.hamiltonian.local_energy(&m.params, &c)?.total();
        *re = e.re;
        *im = e.im;
        Ok(())
    })
}

/// Exact ground-state energy of a noninteracting system.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_reference_energy(config_toml: *const c_char, out: *mut f64) -> SpinvmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = RunConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        *out = runner::reference(&config)?.energy;
        Ok(())
    })
}

/// Trains as the `train` command does, writing artifacts under the config's
/// `out_dir`. `final_energy` receives the last step's mean energy (NaN for a
/// zero-iteration run).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `final_energy` may be null.
#[no_mangle]
pub unsafe extern "C" fn spinvmc_train(
    config_toml: *const c_char,
    long_run: c_int,
    final_energy: *mut f64,
) -> SpinvmcStatus {
    guard(|| {
        let config = RunConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        let summary = runner::train(&config, &TrainOptions { long_run: long_run != 0, resume: None })?;
        if let Some(out) = final_energy.as_mut() {
            *out = summary.log.last().map_or(f64::NAN, |r| r.energy_mean);
        }
        Ok(())
    })
}
