//! `histmark`: fit an owner, issue watermarked tables, trace leaks, attack, evaluate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use histmark::codebook::false_positive_rate;
use histmark::desk::{desk_schema, desk_table, DESK_ROWS};
use histmark::pipeline::files;
use histmark::table::infer_schema;
use histmark::{
    apply_attack, fit_owner, load_table, run_evaluation, save_table, AttackKind, AttackSpec, Error, EvalConfig, Owner,
    PipelineConfig, Result, SecretKey, TableSchema,
};

const KEY_ENV: &str = "TABLEMARK_KEY";

#[derive(Parser)]
#[command(name = "histmark", version, about = "Buyer-traceable watermarks for synthetic tables")]
struct Cli {
    /// TOML file with [pipeline] and [eval] tables; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File holding the secret key as 32 raw bytes or 64 hex digits. Without it the
    /// key is read as hex from the TABLEMARK_KEY environment variable.
    #[arg(long, global = true)]
    key_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the built-in trading-desk demo table and its schema.
    Desk {
        #[arg(long, default_value_t = DESK_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema_out: PathBuf,
    },
    /// Fits clusters, sampler, template and robustness model into an owner directory.
    Fit(FitArgs),
    /// Writes (or grows) the watermark database of an owner directory.
    GenDb {
        #[arg(long)]
        dir: PathBuf,
        /// New database size; defaults to the fitted N.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Produces a buyer's watermarked table.
    Encode {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        buyer: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON file for the optimizer report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decodes a suspect table and names the buyer, if any.
    Decode {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Applies one attack to a table.
    Attack {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        kind: AttackKind,
        #[arg(long)]
        intensity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Cluster count for the adaptive attacker.
        #[arg(long, default_value_t = 256)]
        m: usize,
        /// Template size guessed by the adaptive attacker.
        #[arg(long, default_value_t = 32)]
        l: usize,
    },
    /// Measures traceability under attacks and the utility cost of the watermark.
    Eval {
        #[arg(long)]
        dir: PathBuf,
        /// The owner's original table.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Text report path.
        #[arg(long)]
        text: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON; inferred from the CSV when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Distinct-value count at or below which an inferred column is categorical.
    #[arg(long, default_value_t = 10)]
    categorical_threshold: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    deletion_sims: Option<usize>,
    #[arg(long)]
    delta_fpr: Option<f64>,
    #[arg(long)]
    delta_fnr: Option<f64>,
    #[arg(long)]
    i_per: Option<f64>,
    #[arg(long)]
    i_alt: Option<f64>,
    #[arg(long)]
    i_del: Option<f64>,
    #[arg(long)]
    variance_target: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    /// Forces the bit-error tolerance instead of deriving it.
    #[arg(long)]
    delta_be: Option<usize>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    tau_init: Option<f64>,
    #[arg(long)]
    effort: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    pipeline: PipelineConfig,
    eval: EvalConfig,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::validation(format!("config {}: {e}", path.display())))
}

fn read_key(key_file: Option<&Path>) -> Result<SecretKey> {
    if let Some(path) = key_file {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        return SecretKey::from_file_contents(&data);
    }
    match std::env::var(KEY_ENV) {
        Ok(hex) => SecretKey::from_hex(&hex),
        Err(_) => Err(Error::validation(format!("no secret key: pass --key-file or set {KEY_ENV}"))),
    }
}

fn apply_fit_flags(config: &mut PipelineConfig, a: &FitArgs) {
    fn set<T: Copy>(slot: &mut T, v: Option<T>) {
        if let Some(v) = v {
            *slot = v;
        }
    }
    set(&mut config.m, a.m);
    set(&mut config.l, a.l);
    set(&mut config.n, a.n);
    set(&mut config.seed, a.seed);
    set(&mut config.variance_target, a.variance_target);
    set(&mut config.jitter, a.jitter);
    let r = &mut config.robustness;
    if a.t.is_some() {
        r.t = a.t;
    }
    set(&mut r.deletion_sims, a.deletion_sims);
    set(&mut r.delta_fpr, a.delta_fpr);
    set(&mut r.delta_fnr, a.delta_fnr);
    set(&mut r.i_per, a.i_per);
    set(&mut r.i_alt, a.i_alt);
    set(&mut r.i_del, a.i_del);
    if a.delta_be.is_some() {
        config.delta_be = a.delta_be;
    }
    let o = &mut config.optimizer;
    set(&mut o.stages, a.stages);
    set(&mut o.tau_init, a.tau_init);
    set(&mut o.effort, a.effort);
}

fn load_owner_table(dir: &Path, data: &Path) -> Result<histmark::Table> {
    let schema = TableSchema::load_json(dir.join(files::SCHEMA))?;
    load_table(data, &schema)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::validation("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    }
    let file_config = load_config(cli.config.as_deref())?;
    let key_file = cli.key_file.as_deref();
    match cli.command {
        Command::Desk {
            rows,
            seed,
            out,
            schema_out,
        } => {
            save_table(&desk_table(rows, seed), &out)?;
            desk_schema().save_json(&schema_out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::Fit(args) => {
            let mut config = file_config.pipeline;
            apply_fit_flags(&mut config, &args);
            config.validate()?;
            let key = read_key(key_file)?;
            let schema = match &args.schema {
                Some(p) => TableSchema::load_json(p)?,
                None => infer_schema(&args.data, args.categorical_threshold)?,
            };
            let table = load_table(&args.data, &schema)?;
            let owner = fit_owner(&table, &key, &config)?;
            owner.save_channel(&args.out)?;
            println!("clusters: {}", owner.model.m);
            println!("template bits: {}", owner.template.bits());
            println!("delta_BE: {}", owner.robustness.delta_be);
            println!("delta_BER: {:.6e}", owner.robustness.delta_ber);
            println!("transition samples per cluster: {}", owner.robustness.samples_per_cluster);
        }
        Command::GenDb { dir, n } => {
            let key = read_key(key_file)?;
            let mut owner = Owner::load(&dir, &key)?;
            if let Some(n) = n {
                let fpr = false_positive_rate(n, owner.config.l, owner.db.delta_be);
                if fpr > owner.config.robustness.delta_fpr {
                    return Err(Error::Capacity(format!(
                        "N = {n} pushes the false-positive rate to {fpr:.3e}, above the target {:.3e}",
                        owner.config.robustness.delta_fpr
                    )));
                }
                owner.db.extend(n)?;
            }
            owner.save_db(&dir)?;
            println!("watermarks: {}", owner.db.n);
            println!("assigned: {}", owner.db.assignments.len());
        }
        Command::Encode {
            dir,
            buyer,
            seed,
            out,
            report,
        } => {
            let key = read_key(key_file)?;
            let mut owner = Owner::load(&dir, &key)?;
            let release = owner.encode(&buyer, seed)?;
            save_table(&release.table, &out)?;
            owner.save_db(&dir)?;
            if let Some(path) = report {
                let json = serde_json::to_string_pretty(&release.histogram.report)?;
                std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
            }
            println!("buyer: {buyer}");
            println!("mse: {:.3}", release.histogram.mse);
            println!("rows: {}", release.table.len());
        }
        Command::Decode { dir, data } => {
            let key = read_key(key_file)?;
            let owner = Owner::load(&dir, &key)?;
            let table = load_owner_table(&dir, &data)?;
            let (bits, buyer) = owner.identify(&table)?;
            println!("buyer: {}", buyer.as_deref().unwrap_or("none"));
            println!("bits: {bits}");
        }
        Command::Attack {
            data,
            schema,
            kind,
            intensity,
            seed,
            out,
            m,
            l,
        } => {
            let schema = TableSchema::load_json(&schema)?;
            let table = load_table(&data, &schema)?;
            let spec = AttackSpec::new(kind, intensity, seed)?;
            let attacked = apply_attack(&table, &spec, m, l)?;
            save_table(&attacked, &out)?;
            println!("{kind} at {intensity}: {} -> {} rows", table.len(), attacked.len());
        }
        Command::Eval {
            dir,
            data,
            trials,
            seed,
            out,
            text,
        } => {
            let key = read_key(key_file)?;
            let mut config = file_config.eval;
            if let Some(t) = trials {
                config.trials = t;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            let owner = Owner::load(&dir, &key)?;
            let table = load_owner_table(&dir, &data)?;
            let report = run_evaluation(&owner, &table, &config)?;
            let rendered = report.to_text();
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&report)?;
                std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
            }
            if let Some(path) = text {
                std::fs::write(&path, &rendered).map_err(|e| Error::io(&path, e))?;
            }
            print!("{rendered}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
