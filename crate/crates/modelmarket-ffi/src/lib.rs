//! C ABI over the marketplace simulator. Handles are opaque pointers,
//! results come back as UTF-8 JSON strings the caller frees with
//! [`mm_string_free`], and every fallible call returns an [`MmStatus`]
//! code with a thread-local message behind [`mm_last_error`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;

use modelmarket::protocol::{ExchangeParams, Strategy, World};
use modelmarket::scenario::{run_attack_cell, run_market, MarketOutcome, ScenarioFile};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum MmStatus {
    Ok = 0,
    /// Null pointer or malformed UTF-8 argument.
    InvalidArgument = 1,
    /// Scenario or instance file failed to parse or validate.
    BadScenario = 2,
    /// The run itself failed (benchmark aborted, exchange failed ...).
    RunFailed = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Message describing the most recent error on this thread. Borrowed;
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mm_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Free a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be a pointer previously returned by one of the
/// string-returning functions here, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// # Safety: `ptr` must be null or a valid NUL-terminated string.
unsafe fn optional_str<'a>(ptr: *const c_char) -> Result<Option<&'a str>, MmStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(Some)
        .map_err(|_| MmStatus::InvalidArgument)
}

fn load_scenario(text: Option<&str>) -> Result<ScenarioFile, MmStatus> {
    match text {
        None => Ok(ScenarioFile::default()),
        Some(t) => ScenarioFile::from_toml(t).map_err(|e| {
            set_error(&e.to_string());
            MmStatus::BadScenario
        }),
    }
}

/// A finished whole-market run.
pub struct MmRun {
    world: World,
    outcome: MarketOutcome,
}

/// Run a full market scenario. `scenario_toml` may be null for the
/// built-in scenario; `out_run` receives an owned handle on success.
///
/// # Safety
/// `scenario_toml` must be null or a valid NUL-terminated UTF-8 string;
/// `out_run` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn mm_simulate(
    scenario_toml: *const c_char,
    seed: u64,
    out_run: *mut *mut MmRun,
) -> MmStatus {
    if out_run.is_null() {
        set_error("out_run is null");
        return MmStatus::InvalidArgument;
    }
    let text = match optional_str(scenario_toml) {
        Ok(t) => t,
        Err(s) => {
            set_error("scenario_toml is not valid UTF-8");
            return s;
        }
    };
    let scenario = match load_scenario(text) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let config = match scenario.world_config(Some(seed)) {
        Ok(c) => c,
        Err(e) => {
            set_error(&e.to_string());
            return MmStatus::BadScenario;
        }
    };
    let (world, outcome) = run_market(World::new(config));
    *out_run = Box::into_raw(Box::new(MmRun { world, outcome }));
    MmStatus::Ok
}

/// Free a run handle. Null is a no-op.
///
/// # Safety
/// `run` must be a handle from [`mm_simulate`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mm_run_free(run: *mut MmRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Market outcome of a run as a JSON string (caller frees).
///
/// # Safety
/// `run` must be a live handle from [`mm_simulate`].
#[no_mangle]
pub unsafe extern "C" fn mm_run_outcome_json(run: *const MmRun) -> *mut c_char {
    let Some(run) = run.as_ref() else {
        set_error("run is null");
        return ptr::null_mut();
    };
    match serde_json::to_string(&run.outcome) {
        Ok(json) => to_c_string(json),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Full transcript of a run as JSON lines (caller frees).
///
/// # Safety
/// `run` must be a live handle from [`mm_simulate`].
#[no_mangle]
pub unsafe extern "C" fn mm_run_transcript_jsonl(run: *const MmRun) -> *mut c_char {
    let Some(run) = run.as_ref() else {
        set_error("run is null");
        return ptr::null_mut();
    };
    to_c_string(run.world.transcript.to_jsonl())
}

/// Hex digest of the transcript: the determinism witness (caller frees).
///
/// # Safety
/// `run` must be a live handle from [`mm_simulate`].
#[no_mangle]
pub unsafe extern "C" fn mm_run_transcript_digest_hex(run: *const MmRun) -> *mut c_char {
    let Some(run) = run.as_ref() else {
        set_error("run is null");
        return ptr::null_mut();
    };
    to_c_string(run.world.transcript.digest().to_hex())
}

/// Run one benchmark flow and return the on-chain result as JSON
/// (caller frees via [`mm_string_free`]).
///
/// # Safety
/// `scenario_toml` must be null or valid UTF-8; `out_json` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mm_bench(
    scenario_toml: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> MmStatus {
    if out_json.is_null() {
        set_error("out_json is null");
        return MmStatus::InvalidArgument;
    }
    let text = match optional_str(scenario_toml) {
        Ok(t) => t,
        Err(s) => {
            set_error("scenario_toml is not valid UTF-8");
            return s;
        }
    };
    let scenario = match load_scenario(text) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let config = match scenario.world_config(Some(seed)) {
        Ok(c) => c,
        Err(e) => {
            set_error(&e.to_string());
            return MmStatus::BadScenario;
        }
    };
    let mut world = World::new(config);
    let outcome = world.run_benchmark_flow(0);
    if !outcome.published {
        set_error(&outcome.abort.unwrap_or_else(|| "flow incomplete".into()));
        return MmStatus::RunFailed;
    }
    #[derive(serde::Serialize)]
    struct BenchJson {
        id_m: String,
        price: Option<u64>,
        sale_blocked: bool,
        result: modelmarket::benchmark::BenchmarkResult,
    }
    let json = serde_json::to_string(&BenchJson {
        id_m: outcome.id_m.to_hex(),
        price: outcome.price,
        sale_blocked: outcome.sale_blocked,
        result: outcome.result.expect("published"),
    })
    .expect("serialize");
    *out_json = to_c_string(json);
    MmStatus::Ok
}

/// Run a benchmark followed by an exchange; returns settlement JSON.
///
/// # Safety
/// Same contracts as [`mm_bench`].
#[no_mangle]
pub unsafe extern "C" fn mm_trade(
    scenario_toml: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> MmStatus {
    if out_json.is_null() {
        set_error("out_json is null");
        return MmStatus::InvalidArgument;
    }
    let text = match optional_str(scenario_toml) {
        Ok(t) => t,
        Err(s) => {
            set_error("scenario_toml is not valid UTF-8");
            return s;
        }
    };
    let scenario = match load_scenario(text) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let config = match scenario.world_config(Some(seed)) {
        Ok(c) => c,
        Err(e) => {
            set_error(&e.to_string());
            return MmStatus::BadScenario;
        }
    };
    let mut world = World::new(config);
    let bench = world.run_benchmark_flow(0);
    if !bench.published || bench.sale_blocked {
        set_error("model is not tradable");
        return MmStatus::RunFailed;
    }
    let exchange = world.run_exchange_flow(0, 0, ExchangeParams::default());
    #[derive(serde::Serialize)]
    struct TradeJson {
        price: Option<u64>,
        claimed: bool,
        refunded: bool,
        buyer_recovered_model: bool,
    }
    let json = serde_json::to_string(&TradeJson {
        price: bench.price,
        claimed: exchange.claimed,
        refunded: exchange.refunded,
        buyer_recovered_model: exchange.buyer_recovered_model,
    })
    .expect("serialize");
    *out_json = to_c_string(json);
    if exchange.claimed {
        MmStatus::Ok
    } else {
        set_error("exchange did not claim");
        MmStatus::RunFailed
    }
}

/// Run one adversary strategy; returns the attack-cell verdict as JSON.
/// Strategies: forge_model, rollback, tamper_samples, withhold_key,
/// swap_key, repudiate.
///
/// # Safety
/// `strategy` must be a valid NUL-terminated UTF-8 string; `out_json`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mm_attack(
    strategy: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> MmStatus {
    if out_json.is_null() || strategy.is_null() {
        set_error("null argument");
        return MmStatus::InvalidArgument;
    }
    let name = match CStr::from_ptr(strategy).to_str() {
        Ok(n) => n,
        Err(_) => {
            set_error("strategy is not valid UTF-8");
            return MmStatus::InvalidArgument;
        }
    };
    let Some(strategy) = Strategy::from_name(name) else {
        set_error("unknown strategy");
        return MmStatus::BadScenario;
    };
    let cell = run_attack_cell(&strategy, seed);
    let fair = cell.fairness_holds && cell.money_conserved;
    *out_json = to_c_string(serde_json::to_string(&cell).expect("serialize"));
    if fair {
        MmStatus::Ok
    } else {
        set_error("attack violated fairness or conservation");
        MmStatus::RunFailed
    }
}
