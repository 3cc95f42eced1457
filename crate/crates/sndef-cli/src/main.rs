//! `sndef`: secure BMS readout over a simulated NFC link.
//!
//! Subcommands: `readout` runs a full authenticated status read, `attack`
//! runs one adversary scenario and reports which countermeasure contained
//! it, `bench` times the crypto phases, `keygen` writes an identity fixture.
//!
//! Exit codes: 0 success (or attack contained), 2 authentication failure,
//! 3 secure-channel rejection, 4 timeout, 5 attack NOT contained,
//! 64 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sndef::codec::CipherSuiteId;
use sndef::device::Scenario;
use sndef::fixture::{IdentityFixture, PackFixture};
use sndef::harness::{
    self, AttackKind, AttackParams, BenchReport, RunConfig, ScenarioReport, DEFAULT_SEED,
};
use sndef::peer::{FailurePhase, ReadoutOutcome};
use sndef::transport::DEFAULT_LINK_LATENCY_MS;

const EXIT_AUTH_FAILURE: u8 = 2;
const EXIT_CHANNEL_REJECTED: u8 = 3;
const EXIT_TIMEOUT: u8 = 4;
const EXIT_ATTACK_SUCCEEDED: u8 = 5;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "sndef",
    version,
    about = "Secure BMS status readout over a simulated NFC link"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a readout session: mutual auth, key derivation, status exchange
    Readout(ReadoutArgs),
    /// Run an adversary scenario; exits 0 only if the attack was contained
    Attack(AttackArgs),
    /// Benchmark authentication and per-suite seal+unseal
    Bench(BenchArgs),
    /// Generate a device identity fixture
    Keygen(KeygenArgs),
}

#[derive(Args, Clone)]
struct CommonRunArgs {
    /// Battery pack fixture (TOML); the built-in demo pack when omitted
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Identity fixture (TOML); the built-in demo identity when omitted
    #[arg(long)]
    identity: Option<PathBuf>,
    /// Cipher suite: cbc-cmac | gcm | ccm | eax (default cbc-cmac; a
    /// downgrade attack defaults to gcm so the rewrite changes the suite)
    #[arg(long)]
    suite: Option<String>,
    /// active | on-rest; defaults to the pack fixture's scenario
    #[arg(long)]
    scenario: Option<String>,
    /// Deterministic run seed
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Simulated link latency in ms
    #[arg(long, default_value_t = DEFAULT_LINK_LATENCY_MS)]
    latency_ms: u64,
    /// Write the full JSON report to this path
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReadoutArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Use a reader with a mismatched master key
    #[arg(long)]
    wrong_key: bool,
    /// Never raise the RF field (an on-rest pack stays asleep)
    #[arg(long)]
    no_field: bool,
    /// Inject an adversary: eavesdrop | tamper | replay | downgrade | drop
    #[arg(long)]
    adversary: Option<String>,
    /// Configuration update KEY:HEXVALUE after the read (e.g. 0003:0064);
    /// forces a read-write session
    #[arg(long)]
    update: Option<String>,
}

#[derive(Args)]
struct AttackArgs {
    /// eavesdrop | tamper | replay | downgrade | drop
    scenario_name: String,
    #[command(flatten)]
    common: CommonRunArgs,
    /// Tamper: bit position to flip (wraps modulo the frame size)
    #[arg(long, default_value_t = 37)]
    bit_offset: usize,
    /// Tamper/replay: 0-based index of the targeted DATA frame
    #[arg(long, default_value_t = 0)]
    frame_index: usize,
    /// Downgrade: suite code to rewrite to
    #[arg(long, default_value = "cbc-cmac")]
    target_suite: String,
    /// Drop: per-frame drop probability
    #[arg(long, default_value_t = 1.0)]
    drop_probability: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Payload size in bytes (up to 10 KiB)
    #[arg(long, default_value_t = 192)]
    payload: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: u32,
    /// Also benchmark CCM and EAX
    #[arg(long)]
    all_suites: bool,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct KeygenArgs {
    /// 8-byte device serial as 16 hex digits
    #[arg(long)]
    serial: String,
    /// Output path for the identity fixture
    #[arg(long, default_value = "identity.toml")]
    out: PathBuf,
    /// Derive the key deterministically from this seed instead of OS entropy
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Readout(args) => cmd_readout(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Keygen(args) => cmd_keygen(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code)
        }
    }
}

struct CliError {
    message: String,
    exit_code: u8,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn usage_error(message: impl Into<String>) -> CliError {
    CliError {
        message: message.into(),
        exit_code: EXIT_USAGE,
    }
}

fn run_error(message: impl Into<String>) -> CliError {
    CliError {
        message: message.into(),
        exit_code: 1,
    }
}

fn parse_suite(name: &str) -> Result<CipherSuiteId, CliError> {
    CipherSuiteId::from_name(name)
        .ok_or_else(|| usage_error(format!("unknown cipher suite {name:?}")))
}

fn load_run_config(common: &CommonRunArgs, default_suite: &str) -> Result<RunConfig, CliError> {
    let pack = match &common.fixture {
        Some(path) => PackFixture::load(path)
            .map_err(|e| usage_error(format!("pack fixture {}: {e}", path.display())))?,
        None => PackFixture::default_demo(),
    };
    let identity = match &common.identity {
        Some(path) => IdentityFixture::load(path)
            .map_err(|e| usage_error(format!("identity fixture {}: {e}", path.display())))?,
        None => IdentityFixture::default_demo(),
    };
    identity
        .to_identity()
        .map_err(|e| usage_error(e.to_string()))?;

    let suite = parse_suite(common.suite.as_deref().unwrap_or(default_suite))?;
    let scenario = match &common.scenario {
        Some(name) => Scenario::from_name(name)
            .ok_or_else(|| usage_error(format!("unknown scenario {name:?}")))?,
        None => pack.scenario().map_err(|e| usage_error(e.to_string()))?,
    };

    let mut config = RunConfig::new(suite, scenario);
    config.identity = identity;
    config.pack = pack;
    config.seed = common.seed;
    config.latency_ms = common.latency_ms;
    Ok(config)
}

fn write_json(path: &Path, json: &str) -> Result<(), CliError> {
    std::fs::write(path, json).map_err(|e| run_error(format!("write {}: {e}", path.display())))
}

fn parse_update(spec: &str) -> Result<(u16, Vec<u8>), CliError> {
    let (key_text, value_text) = spec
        .split_once(':')
        .ok_or_else(|| usage_error("update must be KEY:HEXVALUE, e.g. 0003:0064"))?;
    let key_bytes =
        hex::decode(key_text).map_err(|_| usage_error("update key must be 2 bytes of hex"))?;
    let key: [u8; 2] = key_bytes
        .try_into()
        .map_err(|_| usage_error("update key must be 2 bytes of hex"))?;
    let value =
        hex::decode(value_text).map_err(|_| usage_error("update value must be hex bytes"))?;
    Ok((u16::from_be_bytes(key), value))
}

fn wrong_key_identity(identity: &IdentityFixture) -> Result<IdentityFixture, CliError> {
    let mut key = hex::decode(&identity.master_key)
        .map_err(|_| usage_error("identity fixture has a malformed master key"))?;
    for byte in &mut key {
        *byte ^= 0xFF;
    }
    Ok(IdentityFixture {
        serial: identity.serial.clone(),
        master_key: hex::encode(key),
    })
}

fn outcome_exit_code(outcome: &ReadoutOutcome) -> u8 {
    match outcome {
        ReadoutOutcome::Success => 0,
        ReadoutOutcome::Rejected {
            phase: FailurePhase::Auth,
            ..
        } => EXIT_AUTH_FAILURE,
        ReadoutOutcome::Rejected {
            phase: FailurePhase::Channel,
            ..
        } => EXIT_CHANNEL_REJECTED,
        ReadoutOutcome::Timeout => EXIT_TIMEOUT,
    }
}

fn print_report_summary(report: &ScenarioReport) {
    println!(
        "scenario: {}   suite: {}   seed: {}",
        report.scenario, report.suite, report.seed
    );
    match &report.outcome {
        ReadoutOutcome::Success => println!("outcome: success"),
        ReadoutOutcome::Rejected { phase, reason } => {
            println!("outcome: rejected ({phase:?}): {reason}")
        }
        ReadoutOutcome::Timeout => println!("outcome: timeout"),
    }
    println!(
        "auth phase:         {:>4} sim-ms   ({} µs wall)",
        report.timings.auth_sim_ms, report.timings.auth_wall_us
    );
    println!(
        "transmission phase: {:>4} sim-ms   ({} µs wall)",
        report.timings.transmission_sim_ms, report.timings.transmission_wall_us
    );
    if let Some(countermeasure) = &report.countermeasure {
        println!("countermeasure: {countermeasure}");
    }
    if let Some(contained) = report.contained {
        println!(
            "containment: {}",
            if contained {
                "attack contained, no asset compromised"
            } else {
                "ATTACK SUCCEEDED"
            }
        );
    }
    if let Some(scan) = &report.leak_scan {
        println!(
            "plaintext leak scan: {} windows checked, {} matches",
            scan.windows_checked, scan.matches
        );
    }
    if let Some(t) = &report.telemetry {
        let cells: Vec<String> = t.cell_voltages_mv.iter().map(u16::to_string).collect();
        let temps: Vec<String> = t
            .temperatures_dc
            .iter()
            .map(|dc| format!("{:.1}", f64::from(*dc) / 10.0))
            .collect();
        println!("telemetry:");
        println!("  cells (mV):  {}", cells.join(" "));
        println!("  temps (°C):  {}", temps.join(" "));
        println!(
            "  state of health: {}%   cycles: {}   faults: {:#06x}",
            t.state_of_health, t.cycle_count, t.fault_flags
        );
        println!(
            "  lifetime min voltage: {} mV   lifetime max temp: {:.1} °C",
            t.lifetime_min_voltage_mv,
            f64::from(t.lifetime_max_temp_dc) / 10.0
        );
    }
    if let Some(version) = report.config_ack_version {
        println!("config update acknowledged, version {version}");
    }
}

fn cmd_readout(args: ReadoutArgs) -> Result<u8, CliError> {
    let mut config = load_run_config(&args.common, "cbc-cmac")?;
    if args.wrong_key {
        config.reader_identity = Some(wrong_key_identity(&config.identity)?);
    }
    if args.no_field {
        config.raise_field = false;
    }
    if let Some(update) = &args.update {
        config.update = Some(parse_update(update)?);
    }
    if let Some(name) = &args.adversary {
        let kind = AttackKind::from_name(name)
            .ok_or_else(|| usage_error(format!("unknown adversary {name:?}")))?;
        config.adversary = harness::adversary_for(kind, &AttackParams::default());
    }

    let report = harness::run_readout(&config).map_err(|e| run_error(e.to_string()))?;
    print_report_summary(&report);
    if let Some(path) = &args.common.json_out {
        write_json(path, &report.to_json())?;
    }
    Ok(outcome_exit_code(&report.outcome))
}

fn cmd_attack(args: AttackArgs) -> Result<u8, CliError> {
    let kind = AttackKind::from_name(&args.scenario_name)
        .ok_or_else(|| usage_error(format!("unknown attack scenario {:?}", args.scenario_name)))?;
    let default_suite = if kind == AttackKind::Downgrade {
        "gcm"
    } else {
        "cbc-cmac"
    };
    let config = load_run_config(&args.common, default_suite)?;
    let params = AttackParams {
        bit_offset: args.bit_offset,
        frame_index: args.frame_index,
        target_suite: parse_suite(&args.target_suite)?,
        drop_probability: args.drop_probability,
    };

    let report =
        harness::run_attack(kind, &params, &config).map_err(|e| run_error(e.to_string()))?;
    print_report_summary(&report);
    if let Some(path) = &args.common.json_out {
        write_json(path, &report.to_json())?;
    }
    Ok(if report.contained == Some(true) {
        0
    } else {
        EXIT_ATTACK_SUCCEEDED
    })
}

fn cmd_bench(args: BenchArgs) -> Result<u8, CliError> {
    let report: BenchReport = harness::run_bench(args.payload, args.iterations, args.all_suites)
        .map_err(|e| usage_error(e.to_string()))?;
    print!("{}", report.render_table());
    if let Some(path) = &args.json_out {
        write_json(path, &report.to_json())?;
    }
    Ok(0)
}

fn cmd_keygen(args: KeygenArgs) -> Result<u8, CliError> {
    let serial: [u8; 8] = hex::decode(&args.serial)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| usage_error("serial must be exactly 16 hex digits"))?;

    use rand::SeedableRng;
    let fixture = match args.seed {
        Some(seed) => {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            harness::generate_identity(serial, &mut rng)
        }
        None => harness::generate_identity(serial, &mut rand::rngs::OsRng),
    };
    std::fs::write(&args.out, fixture.to_toml())
        .map_err(|e| run_error(format!("write {}: {e}", args.out.display())))?;
    println!(
        "wrote identity fixture for serial {} to {}",
        args.serial,
        args.out.display()
    );
    Ok(0)
}
