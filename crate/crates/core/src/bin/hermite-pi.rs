use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hermite_pi::cost::{self, CostTable, Dataset, Plan};
use hermite_pi::field::{FieldParams, FixedPointCodec, DEFAULT_FRAC_BITS, DEFAULT_MODULUS};
use hermite_pi::nn::fixed::{quantize, QuantizedModel};
use hermite_pi::nn::io::{load_model, save_model, GoldenVector};
use hermite_pi::nn::surgery::{herpnize, SurgeryMode};
use hermite_pi::nn::{calibrate, zoo, ModelGraph};
use hermite_pi::protocol::{offline_phase, run_client, run_server, OfflineMaterial, SessionConfig};
use hermite_pi::tensor::Tensor;
use hermite_pi::train::{toy_mlp, train, AblationMode, Generator, ToyDataset, TrainConfig, TrainError};
use hermite_pi::verify::{self, Suite};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

#[derive(Parser)]
#[command(name = "hermite-pi", version, about = "Two-party private inference with HerPN activations")]
struct Cli {
    #[command(flatten)]
    field: FieldArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct FieldArgs {
    /// Prime modulus of the share field.
    #[arg(long, global = true, env = "HERMITE_PI_MODULUS", default_value_t = DEFAULT_MODULUS)]
    modulus: u64,
    /// Fixed-point fractional bits.
    #[arg(long, global = true, env = "HERMITE_PI_FRAC_BITS", default_value_t = DEFAULT_FRAC_BITS)]
    frac_bits: u32,
}

impl FieldArgs {
    fn params(&self) -> Result<FieldParams> {
        FieldParams::new(self.modulus, self.frac_bits).context("field parameters")
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the trusted dealer: write offline material for both parties.
    Deal {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_client: PathBuf,
        #[arg(long)]
        out_server: PathBuf,
        /// Dealer seed, hex.
        #[arg(long, value_parser = parse_hex)]
        seed: u64,
        /// Also write the client's public view of the model.
        #[arg(long)]
        out_public: Option<PathBuf>,
    },
    /// Run one side of an online session.
    Infer {
        #[arg(long, value_enum)]
        role: Role,
        #[arg(long)]
        addr: String,
        /// Model file (server), or model / public view (client).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        material: PathBuf,
        /// Client input: a tensor or golden-vector JSON file.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        metrics: PathBuf,
        /// Client output tensor (JSON). Printed to stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seconds the client keeps retrying the connection.
        #[arg(long, default_value_t = 10)]
        connect_timeout: u64,
    },
    /// Train a toy classifier under one ablation mode.
    TrainToy(TrainArgs),
    /// Estimate activation costs of GC, BT and mixed plans.
    EstimateCost {
        /// Named architecture (vgg16, resnet18, resnet32, pa-resnet18, pa-resnet32).
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        arch: Option<String>,
        #[arg(long, default_value = "cifar")]
        dataset: String,
        /// Count activations of a model file instead.
        #[arg(long)]
        model: Option<PathBuf>,
        /// all-gc, all-bt or mixed:I,J,..
        #[arg(long, default_value = "all-bt")]
        plan: String,
        /// Cost table file (`kind phase time_us comm_kb` lines).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Write the estimate as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Replace BN + ReLU blocks with HerPN.
    Herpnize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also rewire standard residual blocks.
        #[arg(long)]
        surgery: bool,
        /// Calibrate the new statistics on this many uniform samples.
        #[arg(long)]
        calibrate: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        range: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run built-in invariant suites.
    Verify {
        #[arg(long, default_value = "all", value_parser = |s: &str| s.parse::<Suite>())]
        suite: Suite,
    },
    /// Write a seeded demo model (mlp3, mlp3-relu, cnn6).
    Zoo {
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Client,
    Server,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "herpn-basiswise", value_parser = |s: &str| s.parse::<AblationMode>())]
    mode: AblationMode,
    #[arg(long, default_value = "two-spirals", value_parser = |s: &str| s.parse::<Generator>())]
    dataset: Generator,
    /// TrainConfig JSON; flags below override nothing when it is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    n_train: usize,
    #[arg(long, default_value_t = 512)]
    n_test: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = hermite_pi::train::TOY_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = hermite_pi::train::TOY_DEPTH)]
    depth: usize,
    /// Per-epoch records plus a summary, one JSON object per line.
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Plot-ready CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Trained model (inference mode).
    #[arg(long)]
    model_out: Option<PathBuf>,
}

fn parse_hex(s: &str) -> Result<u64, String> {
    let t = s.trim_start_matches("0x");
    u64::from_str_radix(t, 16).map_err(|e| format!("{s:?} is not a hex u64: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn deal(
    params: FieldParams,
    model: &Path,
    out_client: &Path,
    out_server: &Path,
    seed: u64,
    out_public: Option<&Path>,
) -> Result<()> {
    let graph = load_model(model).with_context(|| format!("loading {}", model.display()))?;
    let q = quantize(&graph, &FixedPointCodec::new(params)).context("model")?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (client, server, audit) = offline_phase(&q, &mut rng)?;
    for e in &audit.entries {
        println!(
            "step {:>3} {:<10} elements {:>6} triples {:>6} truncations {:>6} unguarded {} identity {}",
            e.step,
            e.label,
            e.elements,
            e.triples,
            e.truncations,
            e.unguarded,
            if e.identity_ok { "ok" } else { "FAILED" }
        );
    }
    if !audit.identities_hold() {
        bail!("dealer identity check failed");
    }
    println!(
        "model hash {:016x}, {} triples, {} unguarded truncations",
        audit.model_hash,
        audit.triples(),
        audit.unguarded()
    );
    for (m, path) in [(&client, out_client), (&server, out_server)] {
        let mut w = create(path)?;
        m.write_to(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = out_public {
        fs::write(p, serde_json::to_string_pretty(&q.public_view())? + "\n")?;
    }
    Ok(())
}

/// A model graph file, or a public view written by `deal --out-public`.
fn load_quantized(path: &Path, params: FieldParams) -> Result<QuantizedModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(q) = serde_json::from_str::<QuantizedModel>(&text) {
        return Ok(q);
    }
    let graph = load_model(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(quantize(&graph, &FixedPointCodec::new(params))?)
}

fn load_input(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(g) = serde_json::from_str::<GoldenVector>(&text) {
        return Ok(g.input);
    }
    serde_json::from_str(&text).with_context(|| format!("{} is neither a tensor nor a golden vector", path.display()))
}

fn connect(addr: &str, timeout: Duration) -> Result<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() < timeout => {
                let _ = e;
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e).with_context(|| format!("connecting to {addr}")),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn infer(
    params: FieldParams,
    role: Role,
    addr: &str,
    model: &Path,
    material: &Path,
    input: Option<&Path>,
    metrics: &Path,
    output: Option<&Path>,
    connect_timeout: u64,
) -> Result<()> {
    let q = load_quantized(model, params)?;
    let mat = OfflineMaterial::read_from(&mut BufReader::new(
        File::open(material).with_context(|| format!("opening {}", material.display()))?,
    ))?;
    let config = SessionConfig::default();
    let run = match role {
        Role::Server => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            let (stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            run_server(&q, mat, stream, config)?
        }
        Role::Client => {
            let Some(input) = input else {
                bail!("the client needs --input");
            };
            let x = load_input(input)?;
            let stream = connect(addr, Duration::from_secs(connect_timeout))?;
            stream.set_nodelay(true)?;
            run_client(&q.public_view(), mat, &x, stream, config)?
        }
    };
    fs::write(metrics, run.transcript.to_jsonl())?;
    if let Some(y) = run.output {
        let json = serde_json::to_string(&y)?;
        match output {
            Some(p) => fs::write(p, json + "\n")?,
            None => println!("{json}"),
        }
    }
    Ok(())
}

fn train_toy(a: &TrainArgs) -> Result<bool> {
    let cfg = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            momentum: a.momentum,
            weight_decay: a.weight_decay,
            seed: a.seed,
            mode: a.mode,
        },
    };
    if cfg.batch_size < 2 {
        bail!("batch size must be at least 2");
    }
    let data = ToyDataset::new(a.dataset, a.n_train, a.n_test, a.noise, a.seed);
    let model = toy_mlp(cfg.mode, 2, a.hidden, a.depth, 2, cfg.seed);
    let (report, ok) = match train(model, &data, &cfg) {
        Ok(r) => (r, true),
        Err(TrainError::Diverged {
            epoch,
            batch,
            report,
            ..
        }) => {
            eprintln!("error: loss became non-finite at epoch {epoch}, batch {batch}; partial report written");
            (*report, false)
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = &a.jsonl {
        let mut w = create(p)?;
        report.write_jsonl(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.csv {
        let mut w = create(p)?;
        report.write_csv(&mut w, true)?;
        w.flush()?;
    }
    if let (Some(p), Some(m)) = (&a.model_out, &report.model) {
        save_model(m, p, None)?;
    }
    let s = &report.summary;
    println!(
        "{} on {}: {} params, {} epochs, loss {:.4}, train {:.3}, test {:.3}, loss variance (last {}) {:.3e}",
        s.mode,
        data.generator,
        s.params,
        s.epochs_run,
        s.final_loss,
        s.final_train_acc,
        s.final_test_acc,
        hermite_pi::train::STABILITY_WINDOW,
        s.loss_stability
    );
    Ok(ok)
}

fn estimate_cost(
    arch: Option<&str>,
    dataset: &str,
    model: Option<&Path>,
    plan: &str,
    table: Option<&Path>,
    json: Option<&Path>,
) -> Result<()> {
    let plan: Plan = plan.parse()?;
    let table = match table {
        Some(p) => CostTable::parse(&fs::read_to_string(p)?)?,
        None => CostTable::default(),
    };
    let profile = match (arch, model) {
        (Some(a), _) => cost::builder(a, dataset.parse::<Dataset>()?)?,
        (None, Some(m)) => cost::activation_counts(&load_model(m)?)?,
        (None, None) => bail!("give --arch or --model"),
    };
    let est = cost::estimate(&profile, &table, &plan)?;
    print!("{}", est.render());
    if let Some(p) = json {
        fs::write(p, serde_json::to_string_pretty(&est)? + "\n")?;
    }
    Ok(())
}

fn herpnize_cmd(model: &Path, out: &Path, surgery: bool, cal: Option<usize>, range: f64, seed: u64) -> Result<()> {
    let graph = load_model(model)?;
    let mode = if surgery { SurgeryMode::Surgery } else { SurgeryMode::Strict };
    let mut new = herpnize(&graph, mode)?;
    if let Some(n) = cal {
        let mut shape = vec![n];
        shape.extend(&new.input_shape);
        let x = zoo::Init::new(seed).uniform(&shape, range);
        calibrate(&mut new, &x)?;
    }
    save_model(&new, out, None)?;
    println!(
        "{} -> {}: {} HerPN, {} ReLU, {} BatchNorm",
        graph.name,
        new.name,
        new.count("HerPN"),
        new.count("ReLU"),
        new.count("BatchNorm")
    );
    Ok(())
}

fn zoo_cmd(name: &str, out: &Path, seed: u64) -> Result<()> {
    let m: ModelGraph = match name {
        "mlp3" => zoo::calibrated(zoo::mlp3(2, 16, 2, seed), 64, 4.0, seed + 1),
        "mlp3-relu" => zoo::mlp3_relu(2, 16, 2, seed),
        "cnn6" => zoo::calibrated(zoo::cnn6(seed), 64, 1.0, seed + 1),
        _ => bail!("unknown zoo model {name:?} (mlp3, mlp3-relu, cnn6)"),
    };
    save_model(&m, out, None)?;
    Ok(())
}

fn run(cli: Cli, params: FieldParams) -> Result<bool> {
    match cli.cmd {
        Cmd::Deal {
            model,
            out_client,
            out_server,
            seed,
            out_public,
        } => deal(params, &model, &out_client, &out_server, seed, out_public.as_deref())?,
        Cmd::Infer {
            role,
            addr,
            model,
            material,
            input,
            metrics,
            output,
            connect_timeout,
        } => infer(
            params,
            role,
            &addr,
            &model,
            &material,
            input.as_deref(),
            &metrics,
            output.as_deref(),
            connect_timeout,
        )?,
        Cmd::TrainToy(a) => return train_toy(&a),
        Cmd::EstimateCost {
            arch,
            dataset,
            model,
            plan,
            table,
            json,
        } => estimate_cost(
            arch.as_deref(),
            &dataset,
            model.as_deref(),
            &plan,
            table.as_deref(),
            json.as_deref(),
        )?,
        Cmd::Herpnize {
            model,
            out,
            surgery,
            calibrate,
            range,
            seed,
        } => herpnize_cmd(&model, &out, surgery, calibrate, range, seed)?,
        Cmd::Verify { suite } => {
            let checks = verify::run(suite);
            for c in &checks {
                println!("{c}");
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
        Cmd::Zoo { name, out, seed } => zoo_cmd(&name, &out, seed)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let params = match cli.field.params() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(cli, params) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
