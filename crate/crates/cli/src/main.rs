use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use onepath_core::bench::{bench_dataset, train_model, BenchConfig};
use onepath_core::input_share::{open_seed, prepare_query, PreparedQuery};
use onepath_core::keystore::KeyStore;
use onepath_core::model_prep::{prepare_model, PreparedModel};
use onepath_core::params::{DEFAULT_FEATURE_BITS, DEFAULT_RING_BITS, DEFAULT_SECURITY_BITS};
use onepath_core::primitives::PrfSeed;
use onepath_core::protocol::{entity_rng, Deployment, DeploymentConfig, EntityId, QueryOutcome};
use onepath_core::selftest::{run_selftest, SelftestConfig};
use onepath_core::tree::{CompleteTree, Dataset};
use onepath_core::{Error, ProtocolParams};

// Writes to stdout, ignoring a closed pipe (e.g. output piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const PROVIDER_FILE: &str = "provider.bin";
const CS1_TREE_FILE: &str = "cs1_tree.bin";
const CS2_ROOT_FILE: &str = "cs2_root.bin";
const SEED_FILE: &str = "seed.ct";

#[derive(Parser)]
#[command(name = "onepath", version, about = "Single-path oblivious decision-tree inference on two servers")]
struct Cli {
    /// Master seed for all randomness; random when unset.
    #[arg(long, env = "ONEPATH_SEED", global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the FE master keys, the three symmetric keys and parameter files.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        /// Overwrite existing key files.
        #[arg(long)]
        force: bool,
    },
    /// Train a CART tree on a CSV, quantize it and pad it to a complete tree.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        depth: u32,
        #[arg(long, default_value_t = DEFAULT_FEATURE_BITS)]
        feature_bits: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a trained model for the servers (provider side).
    Prepare {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Secret-share one input vector (user side).
    Share {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated raw feature values.
        #[arg(long, allow_hyphen_values = true)]
        input: String,
        /// Treat the input as already quantized integers.
        #[arg(long)]
        quantized: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the servers and key center on a shared query and print the label.
    Infer {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        query: PathBuf,
        /// Print the outcome as JSON.
        #[arg(long)]
        json: bool,
        /// Write the message transcript here, one JSON record per line.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run queries and print the leakage audit of each.
    Audit {
        #[command(flatten)]
        run: RunArgs,
        /// A shared query; without one, random inputs are audited.
        #[arg(long)]
        query: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        count: usize,
    },
    /// Train, prepare and time oracle-checked encrypted queries.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        depth: u32,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        /// Sessions in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Dataset name in the report; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
        /// Write the JSON report here ("-" for stdout instead of the table).
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        no_audit: bool,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Run the invariant suite.
    Selftest {
        /// Also validate a key directory.
        #[arg(long)]
        keys: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        trees: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Copy)]
struct ParamArgs {
    #[arg(long, default_value_t = DEFAULT_SECURITY_BITS)]
    security: u32,
    #[arg(long, default_value_t = DEFAULT_RING_BITS)]
    ring_bits: u32,
    #[arg(long, default_value_t = DEFAULT_FEATURE_BITS)]
    feature_bits: u32,
}

impl ParamArgs {
    fn deployment(&self) -> Result<DeploymentConfig> {
        Ok(DeploymentConfig {
            security_bits: self.security,
            params: ProtocolParams::new(self.ring_bits, self.feature_bits)?,
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s} (set ONEPATH_SEED to reproduce)");
        s
    });
    match run(cli.command, seed) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2: an invariant failed; 3: parameters are infeasible; 1: anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Infeasible(_) | Error::UnsupportedSecurityLevel(_)) => 3,
        Some(Error::OracleMismatch(_) | Error::Leakage(_)) => 2,
        _ => 1,
    }
}

fn run(command: Command, seed: u64) -> Result<ExitCode> {
    match command {
        Command::Keygen { out, params, force } => keygen(&out, params, force, seed),
        Command::Train { data, depth, feature_bits, out } => train(&data, depth, feature_bits, &out),
        Command::Prepare { keys, model, out } => prepare(&keys, &model, &out, seed),
        Command::Share { keys, prepared, model, input, quantized, out } => {
            share(&keys, &prepared, &model, &input, quantized, &out, seed)
        }
        Command::Infer { run, query, json, transcript } => infer(&run, &query, json, transcript.as_deref(), seed),
        Command::Audit { run, query, count } => audit(&run, query.as_deref(), count, seed),
        Command::Bench { data, depth, repetitions, jobs, name, json, no_audit, params } => {
            bench(&data, depth, repetitions, jobs, name, json.as_deref(), !no_audit, params, seed)
        }
        Command::Selftest { keys, trees, json } => selftest(keys.as_deref(), trees, json.as_deref(), seed),
    }
}

fn keygen(out: &Path, args: ParamArgs, force: bool, seed: u64) -> Result<ExitCode> {
    let params = ProtocolParams::new(args.ring_bits, args.feature_bits)?;
    let mut rng = entity_rng(seed, EntityId::Kgc);
    let store = KeyStore::generate(args.security, params, &mut rng)?;
    store.save(out, force)?;
    outln!("security: {} bits", args.security);
    outln!("ring: l = {}, feature bits t = {}", args.ring_bits, args.feature_bits);
    outln!("A_max = {}, B_max = {}", params.a_max(), params.b_max());
    outln!("W = {}", params.window());
    outln!("keys written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn train(data: &Path, depth: u32, feature_bits: u32, out: &Path) -> Result<ExitCode> {
    let dataset = Dataset::from_path(data).with_context(|| format!("reading {}", data.display()))?;
    let (tree, summary) = train_model(&dataset, depth, feature_bits)?;
    fs::write(out, serde_json::to_vec_pretty(&tree)?)?;
    outln!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn load_model(path: &Path) -> Result<CompleteTree> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn prepare(keys: &Path, model: &Path, out: &Path, seed: u64) -> Result<ExitCode> {
    let store = KeyStore::load(keys)?;
    let tree = load_model(model)?;
    let mut rng = entity_rng(seed, EntityId::Mp);
    let prf_seed = PrfSeed::sample(tree.gamma(), &mut rng);
    let prepared =
        prepare_model(&tree, &store.keys.provider_keys(), &store.keys.ipfe.mpk, &prf_seed, &store.params, &mut rng)?;
    let group = store.group();
    fs::create_dir_all(out)?;
    fs::write(out.join(PROVIDER_FILE), prepared.encode(group))?;
    fs::write(out.join(CS1_TREE_FILE), prepared.cs1_tree.encode(group))?;
    fs::write(out.join(CS2_ROOT_FILE), prepared.cs2_root.encode(group))?;
    fs::write(out.join(SEED_FILE), &prepared.seed_ct)?;
    outln!("prepared depth-{} tree over {} features ({} node records)", tree.depth(), tree.n(), prepared.cs1_tree.record_count());
    Ok(ExitCode::SUCCESS)
}

fn parse_values<T: std::str::FromStr>(input: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    input
        .split(',')
        .map(|v| v.trim().parse::<T>().with_context(|| format!("bad feature value {v:?}")))
        .collect()
}

fn share(keys: &Path, prepared: &Path, model: &Path, input: &str, quantized: bool, out: &Path, seed: u64) -> Result<ExitCode> {
    let store = KeyStore::load(keys)?;
    let tree = load_model(model)?;
    let x = if quantized {
        parse_values::<u64>(input)?
    } else {
        let quantizer = tree.quantizer.as_ref().ok_or_else(|| anyhow!("model has no quantizer; pass --quantized"))?;
        quantizer.quantize_vector(&parse_values::<f64>(input)?)?
    };
    tree.check_input(&x)?;
    let seed_ct = fs::read(prepared.join(SEED_FILE)).context("reading the seed ciphertext")?;
    let prf_seed = open_seed(&seed_ct, &store.keys.sk3)?;
    let mut rng = entity_rng(seed, EntityId::Du);
    let query = prepare_query(&x, &prf_seed, &store.params, prf_seed.gamma(), &mut rng)?;
    fs::write(out, query.encode())?;
    outln!("session {} ({} features, quantized {:?})", query.session, x.len(), x);
    Ok(ExitCode::SUCCESS)
}

/// Starts all five entities from the stored keys and provider state.
fn load_deployment(run: &RunArgs, seed: u64) -> Result<Deployment> {
    let store = KeyStore::load(&run.keys)?;
    let tree = load_model(&run.model)?;
    let bytes = fs::read(run.prepared.join(PROVIDER_FILE)).context("reading the provider state")?;
    let prepared = PreparedModel::decode(store.group(), &bytes)?;
    let config = DeploymentConfig { security_bits: store.security_bits, params: store.params, ..Default::default() };
    Ok(Deployment::from_parts(tree, &config, &store.keys, prepared, seed)?)
}

/// Runs a stored query; the plaintext input is only reconstructed to check the oracle.
fn run_query(dep: &mut Deployment, query: &PreparedQuery) -> Result<(QueryOutcome, Vec<u64>)> {
    let ring = query.cs1.ring;
    let x: Vec<u64> = query.cs1.features.iter().zip(&query.cs2.features).map(|(a, b)| ring.add(*a, *b)).collect();
    let before = dep.entities().cs2.stored_records();
    let session = dep.submit_prepared(query)?;
    dep.run()?;
    let outcome = dep.outcome(session, &x, before)?;
    dep.verify(&outcome, &x)?;
    Ok((outcome, x))
}

fn infer(run: &RunArgs, query: &Path, json: bool, transcript: Option<&Path>, seed: u64) -> Result<ExitCode> {
    let mut dep = load_deployment(run, seed)?;
    let query = PreparedQuery::decode(&fs::read(query).context("reading the query")?)?;
    let (outcome, _) = run_query(&mut dep, &query)?;
    if let Some(path) = transcript {
        fs::write(path, dep.transcript().to_jsonl(true))?;
    }
    let label = String::from_utf8_lossy(&outcome.label).into_owned();
    if json {
        let value = serde_json::json!({
            "session": outcome.session.to_string(),
            "label": label,
            "oracle_label": outcome.expected_label,
            "counters": outcome.counters,
        });
        outln!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        outln!("{label}");
    }
    Ok(ExitCode::SUCCESS)
}

fn audit(run: &RunArgs, query: Option<&Path>, count: usize, seed: u64) -> Result<ExitCode> {
    let mut dep = load_deployment(run, seed)?;
    let mut outcomes = vec![];
    match query {
        Some(path) => outcomes.push(run_query(&mut dep, &PreparedQuery::decode(&fs::read(path)?)?)?.0),
        None => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let domain = dep.params().feature_domain();
            for _ in 0..count {
                let x: Vec<u64> = (0..dep.tree().n()).map(|_| rand::Rng::gen_range(&mut rng, 0..domain)).collect();
                let outcome = dep.query(&x)?;
                dep.verify(&outcome, &x)?;
                outcomes.push(outcome);
            }
        }
    }
    let mut clean = true;
    for outcome in &outcomes {
        let report = dep.audit(outcome)?;
        clean &= report.passed();
        outln!("{}", serde_json::to_string_pretty(&report)?);
    }
    if !clean {
        bail!(Error::Leakage("audit failed; see the report above".into()));
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn bench(
    data: &Path,
    depth: u32,
    repetitions: usize,
    jobs: usize,
    name: Option<String>,
    json: Option<&Path>,
    audit: bool,
    params: ParamArgs,
    seed: u64,
) -> Result<ExitCode> {
    if !(1..=17).contains(&depth) {
        bail!("depth {depth} outside [1, 17]");
    }
    let dataset = Dataset::from_path(data).with_context(|| format!("reading {}", data.display()))?;
    let name = name.unwrap_or_else(|| data.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned()));
    let config = BenchConfig { name, repetitions, jobs, seed, audit, deployment: params.deployment()? };
    let report = bench_dataset(&dataset, depth, &config)?;
    match json {
        Some(p) if p == Path::new("-") => outln!("{}", report.to_json()),
        Some(p) => {
            fs::write(p, report.to_json() + "\n")?;
            out!("{}", report.to_table());
        }
        None => out!("{}", report.to_table()),
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest(keys: Option<&Path>, trees: usize, json: Option<&Path>, seed: u64) -> Result<ExitCode> {
    let config = SelftestConfig { seed, trees, ..Default::default() };
    let report = run_selftest(&config, keys);
    for check in &report.checks {
        outln!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    outln!("transcript digest: {}", report.transcript_digest);
    if let Some(path) = json {
        fs::write(path, report.to_json() + "\n")?;
    }
    if !report.passed() {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name).collect();
        bail!(Error::OracleMismatch(format!("violated invariants: {}", names.join(", "))));
    }
    Ok(ExitCode::SUCCESS)
}
