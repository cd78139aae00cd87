use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};

use pcfg::cfg::{canonical_serialize, to_dot, to_json_value, Cfg, ReturnStatus};
use pcfg::engine::{construct, EngineRun};
use pcfg::image::{load_image, Image};
use pcfg::verify::verify;
use pcfg::workload::{emit, generate, GroundTruth, Scenario, FAMILIES};

#[derive(Parser)]
#[command(name = "pcfg", version, about = "Parallel control-flow-graph construction for PCFG images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the finalized graph of an image and write it out.
    Analyze {
        image: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Canon)]
        format: Format,
        /// Write the graph here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the graph of an image with a truth file.
    Verify {
        image: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Time construction at several thread counts.
    Bench {
        image: PathBuf,
        /// Comma-separated thread counts, e.g. 1,2,4,8.
        #[arg(long, value_delimiter = ',', required = true)]
        threads: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        /// Corrupts the output of the last run, to test divergence detection.
        #[arg(long, hide = true)]
        inject_divergence: bool,
    },
    /// Generate an image and its truth file.
    Gen {
        family: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to `<family>-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        early_ret: Option<bool>,
        #[arg(long)]
        entries: Option<u32>,
        #[arg(long)]
        extra: Option<u32>,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        hint: Option<bool>,
        #[arg(long)]
        functions: Option<u32>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
    Canon,
}

/// A failure with its exit code.
struct Fail(u8, String);

impl Fail {
    fn io(path: &Path, e: std::io::Error) -> Fail {
        Fail(2, format!("{}: {e}", path.display()))
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(64)
}

/// Reads an image: exit 2 if unreadable, `malformed` if it does not parse.
fn read_image(path: &Path, malformed: u8) -> Result<Image, Fail> {
    let bytes = std::fs::read(path).map_err(|e| Fail::io(path, e))?;
    load_image(&bytes).map_err(|e| Fail(malformed, format!("{}: {e}", path.display())))
}

fn run_engine(image: &Image, threads: usize) -> Result<EngineRun, Fail> {
    construct(image, threads.max(1)).map_err(|e| Fail(1, e.to_string()))
}

fn ms(d: Duration) -> String {
    format!("{:.3} ms", d.as_secs_f64() * 1e3)
}

fn summary(run: &EngineRun) -> String {
    let g: &Cfg = &run.cfg;
    let noreturn = g.entries.values().filter(|f| f.return_status == ReturnStatus::NoReturn).count();
    format!(
        "functions {}, blocks {}, edges {}, noreturn functions {}, tables {}, tables trimmed {}",
        g.entries.len(),
        g.blocks.len(),
        g.edges.len(),
        noreturn,
        run.tables.len(),
        run.report.tables_trimmed
    )
}

fn timings(run: &EngineRun) -> String {
    let t = &run.timings;
    format!("init {}, traversal {}, finalization {}", ms(t.init), ms(t.traversal), ms(t.finalization))
}

fn analyze(image: &Path, threads: Option<usize>, format: Format, out: Option<&Path>) -> Result<(), Fail> {
    let img = read_image(image, 1)?;
    let run = run_engine(&img, threads.unwrap_or_else(default_threads))?;
    let text = match format {
        Format::Canon => canonical_serialize(&run.cfg).map_err(|e| Fail(1, e.to_string()))?,
        Format::Dot => to_dot(&run.cfg),
        Format::Json => {
            let mut v = to_json_value(&run.cfg);
            v["jump_tables"] = run.tables.to_json_value();
            serde_json::to_string_pretty(&v).expect("graph serializes") + "\n"
        }
    };
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Fail::io(p, e))?,
        None => print!("{text}"),
    }
    eprintln!("{}", summary(&run));
    eprintln!("{}", timings(&run));
    Ok(())
}

fn verify_cmd(image: &Path, truth: &Path, threads: Option<usize>) -> Result<(), Fail> {
    let img = read_image(image, 2)?;
    let text = std::fs::read_to_string(truth).map_err(|e| Fail::io(truth, e))?;
    let truth = GroundTruth::from_json(&text).map_err(|e| Fail(2, format!("{}: {e}", truth.display())))?;
    let run = run_engine(&img, threads.unwrap_or_else(default_threads))?;
    let report = verify(&run.cfg, &run.tables, &truth);
    let mut shown = 0;
    for f in &report.facets {
        println!("{} {}", if f.passed() { "PASS" } else { "FAIL" }, f.name);
        for d in &f.diffs {
            if shown < 10 {
                println!("  {d}");
                shown += 1;
            }
        }
    }
    eprintln!("{}", timings(&run));
    if report.passed() {
        Ok(())
    } else {
        let total: usize = report.facets.iter().map(|f| f.diffs.len()).sum();
        Err(Fail(1, format!("{total} differences")))
    }
}

fn bench(image: &Path, threads: &[usize], repeat: usize, inject: bool) -> Result<(), Fail> {
    let img = read_image(image, 1)?;
    let repeat = repeat.max(1);
    let mut reference: Option<String> = None;
    let mut rows = Vec::new();
    for (ti, &t) in threads.iter().enumerate() {
        let mut times = Vec::with_capacity(repeat);
        for r in 0..repeat {
            let start = Instant::now();
            let run = run_engine(&img, t)?;
            times.push(start.elapsed());
            let mut canon = canonical_serialize(&run.cfg).map_err(|e| Fail(1, e.to_string()))?;
            if inject && ti + 1 == threads.len() && r + 1 == repeat {
                canon.push_str("# injected\n");
            }
            match &reference {
                None => reference = Some(canon),
                Some(want) if *want != canon => {
                    return Err(Fail(1, format!("output at {t} threads (run {}) differs from the first run", r + 1)));
                }
                _ => {}
            }
        }
        let mean = times.iter().map(Duration::as_secs_f64).sum::<f64>() / repeat as f64;
        let min = times.iter().min().copied().unwrap_or_default().as_secs_f64();
        rows.push((t, mean, min));
    }
    let base = rows.iter().find(|r| r.0 == 1).map(|r| r.1);
    println!("{:>8} {:>12} {:>12} {:>8}", "threads", "mean_ms", "min_ms", "speedup");
    for &(t, mean, min) in &rows {
        let speedup = base.map_or(f64::NAN, |b| b / mean);
        println!("{t:>8} {:>12.3} {:>12.3} {speedup:>8.2}", mean * 1e3, min * 1e3);
    }
    for &(t, mean, min) in &rows {
        let speedup = base.map_or(f64::NAN, |b| b / mean);
        println!("row threads={t} mean_ms={:.3} min_ms={:.3} speedup={speedup:.3}", mean * 1e3, min * 1e3);
    }
    Ok(())
}

struct GenParams {
    k: Option<u32>,
    depth: Option<u32>,
    early_ret: Option<bool>,
    entries: Option<u32>,
    extra: Option<u32>,
    hint: Option<bool>,
    functions: Option<u32>,
}

fn scenario(family: &str, p: &GenParams) -> Result<Scenario, String> {
    let mut s = Scenario::default_for(family)
        .ok_or_else(|| format!("unknown family {family:?}; expected one of {}", FAMILIES.join(", ")))?;
    let given = [
        ("k", p.k.is_some()),
        ("depth", p.depth.is_some()),
        ("early-ret", p.early_ret.is_some()),
        ("entries", p.entries.is_some()),
        ("extra", p.extra.is_some()),
        ("hint", p.hint.is_some()),
        ("functions", p.functions.is_some()),
    ];
    let accepted: &[&str] = match &mut s {
        Scenario::SharedCode { k } | Scenario::NoreturnCycle { k } => {
            *k = p.k.unwrap_or(*k);
            &["k"]
        }
        Scenario::NoreturnChain { depth, early_ret } => {
            *depth = p.depth.unwrap_or(*depth);
            *early_ret = p.early_ret.unwrap_or(*early_ret);
            &["depth", "early-ret"]
        }
        Scenario::JumpTable { entries } | Scenario::MultiEntry { entries } => {
            *entries = p.entries.unwrap_or(*entries);
            &["entries"]
        }
        Scenario::JumpTableOverapprox { extra, hint } => {
            *extra = p.extra.unwrap_or(*extra);
            *hint = p.hint.unwrap_or(*hint);
            &["extra", "hint"]
        }
        Scenario::BigRandom { functions } => {
            *functions = p.functions.unwrap_or(*functions);
            &["functions"]
        }
        Scenario::TailcallAmbiguous | Scenario::OutlinedCold | Scenario::OpaqueJump => &[],
    };
    if let Some((name, _)) = given.iter().find(|(n, set)| *set && !accepted.contains(n)) {
        return Err(format!("{family} does not take --{name}"));
    }
    Ok(s)
}

fn gen(family: &str, seed: u64, out: Option<PathBuf>, p: &GenParams) -> Result<(), Fail> {
    let s = scenario(family, p).map_err(|e| Fail(1, e))?;
    let (image, truth) = generate(&s, seed).map_err(|e| Fail(1, e.to_string()))?;
    let dir = out.unwrap_or_else(|| PathBuf::from(format!("{family}-{seed}")));
    emit(&image, &truth, &dir).map_err(|e| Fail::io(&dir, e))?;
    println!("{}", dir.join("image.pcfg").display());
    println!("{}", dir.join("truth.json").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { image, threads, format, out } => analyze(&image, threads, format, out.as_deref()),
        Command::Verify { image, truth, threads } => verify_cmd(&image, &truth, threads),
        Command::Bench { image, threads, repeat, inject_divergence } => {
            bench(&image, &threads, repeat, inject_divergence)
        }
        Command::Gen { family, seed, out, k, depth, early_ret, entries, extra, hint, functions } => {
            let p = GenParams { k, depth, early_ret, entries, extra, hint, functions };
            gen(&family, seed, out, &p)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("pcfg: {msg}");
            ExitCode::from(code)
        }
    }
}
