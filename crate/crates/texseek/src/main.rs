//! texseek: texture search over self-describing images.
//!
//! One binary for every phase — corpus generation, indexing (optionally
//! embedding each image's signature into itself), stego embed/extract,
//! local and distributed query, and the measurement harness.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or protocol error.
//! Machine-readable output goes to stdout, diagnostics to stderr;
//! `TEXSEEK_LOG` (error/info/debug) controls verbosity.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use texseek::config::Config;
use texseek::error::{Error, Result};
use texseek::eval;
use texseek::gabor::{normalize_rotation, FeatureExtractor, FeatureVector};
use texseek::net;
use texseek::pnm::{load_pnm, save_pgm};
use texseek::retrieval::{self, RankedResult};
use texseek::stego;

#[derive(Parser)]
#[command(
    name = "texseek",
    version,
    about = "texture search over self-describing images"
)]
struct Cli {
    /// TOML config overriding the built-in defaults (bank geometry,
    /// quantization table, parity options).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index every PNM image under a directory.
    Index {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Index file to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also hide each image's signature in a sibling `.stego.pgm`.
        #[arg(long)]
        embed: bool,
    },
    /// Rank indexed images by similarity to a query image.
    Query {
        /// Index file for a local search.
        #[arg(long, value_name = "FILE", conflicts_with = "providers")]
        index: Option<PathBuf>,
        /// Comma-separated provider endpoints (`label=host:port`) for a
        /// distributed search.
        #[arg(long, value_name = "LIST")]
        providers: Option<String>,
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// How many results to print.
        #[arg(long, value_name = "K", default_value_t = 10)]
        top: usize,
        /// Read the query signature from the image's embedded payload
        /// instead of recomputing it.
        #[arg(long)]
        from_stego: bool,
    },
    /// Hide attributes (and the cover's own signature) in an image.
    Embed {
        #[arg(long, value_name = "FILE")]
        cover: PathBuf,
        /// Attribute pairs, e.g. `--attrs artist=kim subject=granite`.
        #[arg(long = "attrs", value_name = "K=V", num_args = 1..)]
        attrs: Vec<String>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Print the attributes hidden in a stego image.
    Extract {
        #[arg(long, value_name = "FILE")]
        stego: PathBuf,
    },
    /// Serve an image archive to brokers.
    Serve {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Bind address, e.g. 127.0.0.1:7070.
        #[arg(long, value_name = "HOST:PORT")]
        listen: String,
    },
    /// Pull feature records from providers and merge them into one index.
    Dispatch {
        #[arg(long, value_name = "LIST")]
        providers: String,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Measurements over indexes and covers (tab-separated output).
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
    /// Generate a labeled synthetic texture corpus.
    GenCorpus {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        per_class: usize,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Mean leave-one-out precision/recall curve over a labeled index.
    Pr {
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        /// `id<TAB>class` ground truth; defaults to the index's own
        /// class attributes.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
    },
    /// Payload size vs. fidelity sweep on one cover image.
    Sweep {
        #[arg(long, value_name = "FILE")]
        cover: PathBuf,
        /// Payload sizes in bits, e.g. 1000,2000,5000,10000.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// 256-bin gray histogram of an image (optionally side by side with a
    /// second image).
    Hist {
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        #[arg(long, value_name = "FILE")]
        against: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // die quietly when stdout's pipe closes early (`texseek eval pr | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TEXSEEK_LOG", "warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Index { corpus, out, embed } => cmd_index(&cfg, &corpus, &out, embed),
        Command::Query {
            index,
            providers,
            image,
            top,
            from_stego,
        } => cmd_query(&cfg, index, providers, &image, top, from_stego),
        Command::Embed { cover, attrs, out } => cmd_embed(&cfg, &cover, &attrs, &out),
        Command::Extract { stego } => cmd_extract(&cfg, &stego),
        Command::Serve { corpus, listen } => {
            net::serve_provider(&listen, &corpus, &cfg)?.join();
            Ok(())
        }
        Command::Dispatch { providers, out } => cmd_dispatch(&cfg, &providers, &out),
        Command::Eval { what } => match what {
            EvalCommand::Pr { index, manifest } => cmd_eval_pr(&index, manifest.as_deref()),
            EvalCommand::Sweep { cover, sizes, seed } => cmd_eval_sweep(&cfg, &cover, &sizes, seed),
            EvalCommand::Hist { image, against } => cmd_eval_hist(&image, against.as_deref()),
        },
        Command::GenCorpus {
            out,
            classes,
            per_class,
            size,
            seed,
        } => {
            let manifest = eval::gen_corpus(&out, classes, per_class, size, seed)?;
            eprintln!(
                "wrote {} images ({classes} classes x {per_class}) to {}",
                manifest.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn cmd_index(
    cfg: &Config,
    corpus: &std::path::Path,
    out: &std::path::Path,
    embed: bool,
) -> Result<()> {
    let report = retrieval::build_index(corpus, cfg, embed)?;
    std::fs::write(out, retrieval::save_index(&report.index))?;
    eprintln!("indexed {} images -> {}", report.index.len(), out.display());
    for (path, reason) in &report.skipped {
        eprintln!("skipped {}: {reason}", path.display());
    }
    if embed {
        eprintln!("wrote {} stego images", report.stego_written);
        for id in &report.unembedded {
            eprintln!("not embedded (image too small for its payload): {id}");
        }
    }
    Ok(())
}

fn query_features(
    cfg: &Config,
    image: &std::path::Path,
    from_stego: bool,
) -> Result<FeatureVector> {
    let img = load_pnm(image)?;
    if from_stego {
        let payload = stego::extract_payload_with(
            &img,
            &cfg.quant,
            cfg.parity_dc,
            cfg.bank.scales,
            cfg.bank.orientations,
        )
        .map_err(|e| Error::NoEmbeddedAttributes(e.to_string()))?;
        Ok(normalize_rotation(&payload.features))
    } else {
        let features = FeatureExtractor::new(cfg.bank.clone())?.features(&img)?;
        Ok(normalize_rotation(&features).quantize_f32())
    }
}

fn print_results(results: &[RankedResult]) {
    for (i, r) in results.iter().enumerate() {
        println!("{}\t{:.8e}\t{}", i + 1, r.distance, r.id);
    }
}

fn cmd_query(
    cfg: &Config,
    index: Option<PathBuf>,
    providers: Option<String>,
    image: &std::path::Path,
    top: usize,
    from_stego: bool,
) -> Result<()> {
    match (index, providers) {
        (Some(index_path), None) => {
            let idx = retrieval::load_index(&std::fs::read_to_string(index_path)?)?;
            if idx.config_hash != cfg.hash_hex() {
                return Err(Error::ConfigMismatch);
            }
            let img = load_pnm(image)?;
            let results = if from_stego {
                retrieval::query_from_stego(&img, &idx, top, cfg)?
            } else {
                retrieval::query_from_image(&img, &idx, top, cfg)?
            };
            print_results(&results);
            Ok(())
        }
        (None, Some(list)) => {
            let endpoints = net::parse_providers(&list)?;
            let q = query_features(cfg, image, from_stego)?;
            let report = net::remote_query(&endpoints, &q, top, cfg)?;
            for (label, reason) in &report.failures {
                eprintln!("provider {label} failed: {reason}");
            }
            print_results(&report.results);
            Ok(())
        }
        _ => Err(Error::BadConfig(
            "query needs exactly one of --index or --providers".into(),
        )),
    }
}

fn cmd_embed(
    cfg: &Config,
    cover: &std::path::Path,
    attrs: &[String],
    out: &std::path::Path,
) -> Result<()> {
    let attributes: Vec<(String, String)> = attrs
        .iter()
        .map(|pair| {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::BadAttribute(pair.clone(), "missing '='".into()))?;
            Ok((k.to_string(), v.to_string()))
        })
        .collect::<Result<_>>()?;
    let img = load_pnm(cover)?;
    let features = FeatureExtractor::new(cfg.bank.clone())?.features(&img)?;
    let payload = stego::StegoPayload {
        features: normalize_rotation(&features).quantize_f32(),
        attributes,
    };
    let out_img = stego::embed_payload(&img, &payload, &cfg.quant, cfg.parity_dc)?;
    save_pgm(&out_img, out)?;
    let baseline = stego::reencode(&img, &cfg.quant)?;
    eprintln!(
        "embedded {} attribute(s); PSNR {:.2} dB vs. re-encode, {:.2} dB vs. cover",
        payload.attributes.len(),
        stego::psnr(&out_img, &baseline)?,
        stego::psnr(&out_img, &img)?,
    );
    Ok(())
}

fn cmd_extract(cfg: &Config, stego_path: &std::path::Path) -> Result<()> {
    let img = load_pnm(stego_path)?;
    let payload = stego::extract_payload_with(
        &img,
        &cfg.quant,
        cfg.parity_dc,
        cfg.bank.scales,
        cfg.bank.orientations,
    )
    .map_err(|e| Error::NoEmbeddedAttributes(e.to_string()))?;
    for (k, v) in &payload.attributes {
        println!("{k}\t{v}");
    }
    Ok(())
}

fn cmd_dispatch(cfg: &Config, providers: &str, out: &std::path::Path) -> Result<()> {
    let endpoints = net::parse_providers(providers)?;
    let report = net::dispatch_index(&endpoints, cfg)?;
    for (label, reason) in &report.failures {
        eprintln!("provider {label} failed: {reason}");
    }
    std::fs::write(out, retrieval::save_index(&report.index))?;
    let detail: Vec<String> = report
        .per_provider
        .iter()
        .map(|(label, n)| format!("{label}: {n}"))
        .collect();
    eprintln!(
        "merged {} records from {} provider(s) ({}) -> {}",
        report.index.len(),
        report.per_provider.len(),
        detail.join(", "),
        out.display()
    );
    Ok(())
}

fn cmd_eval_pr(index: &std::path::Path, manifest: Option<&std::path::Path>) -> Result<()> {
    let idx = retrieval::load_index(&std::fs::read_to_string(index)?)?;
    let curves = match manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let classes: Vec<(String, String)> = text
                .lines()
                .filter_map(|l| l.split_once('\t'))
                .map(|(id, c)| (id.to_string(), c.to_string()))
                .collect();
            eval::class_retrieval_curves_by(&idx, |r| {
                classes
                    .iter()
                    .find(|(id, _)| *id == r.id)
                    .map(|(_, c)| c.clone())
            })?
        }
        None => eval::class_retrieval_curves(&idx)?,
    };
    let mean = eval::mean_pr(&curves);
    println!("# k\tprecision\trecall");
    for p in &mean {
        println!("{}\t{:.6}\t{:.6}", p.k, p.precision, p.recall);
    }
    Ok(())
}

fn cmd_eval_sweep(cfg: &Config, cover: &std::path::Path, sizes: &[usize], seed: u64) -> Result<()> {
    let img = load_pnm(cover)?;
    let rows = eval::psnr_sweep(&img, sizes, seed, &cfg.quant, cfg.parity_dc)?;
    println!("# bits\tpsnr_vs_baseline_db\tpsnr_vs_cover_db");
    for row in &rows {
        match row.outcome {
            eval::SweepOutcome::Measured {
                psnr_vs_baseline,
                psnr_vs_cover,
            } => println!(
                "{}\t{:.6}\t{:.6}",
                row.payload_bits, psnr_vs_baseline, psnr_vs_cover
            ),
            eval::SweepOutcome::OverCapacity { capacity } => println!(
                "{}\terror\tpayload exceeds capacity of {capacity} bits",
                row.payload_bits
            ),
        }
    }
    Ok(())
}

fn cmd_eval_hist(image: &std::path::Path, against: Option<&std::path::Path>) -> Result<()> {
    let a = load_pnm(image)?.histogram();
    match against {
        None => {
            println!("# bin\tcount");
            for (bin, count) in a.iter().enumerate() {
                println!("{bin}\t{count}");
            }
        }
        Some(path) => {
            let b = load_pnm(path)?.histogram();
            println!("# bin\tcount_a\tcount_b");
            for (bin, (ca, cb)) in a.iter().zip(&b).enumerate() {
                println!("{bin}\t{ca}\t{cb}");
            }
        }
    }
    Ok(())
}
