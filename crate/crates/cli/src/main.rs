use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use mdbpe::collapse::{self, Codebook, CollapseMap};
use mdbpe::format;
use mdbpe::ingest::{self, IngestSpec};
use mdbpe::seqfeat::{emit_features, PositionalEncoding};
use mdbpe::{
    compression_stats, decode, read_vocab, tokenize, train_with_progress, write_vocab, AxisMask,
    CompressedSequence, CompressionReport, TokenGrid, TrainConfig, Vocabulary,
};

/// Multidimensional byte pair encoding for token grids.
#[derive(Parser, Debug)]
#[command(name = "mdbpe", version)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "MDBPE_THREADS")]
    threads: Option<usize>,

    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert images, volumes or index grids into an MDTC corpus.
    Ingest(IngestArgs),
    /// Learn merge rules from an MDTC corpus.
    Train(TrainArgs),
    /// Compress an MDTC corpus into an MDSC sequence corpus.
    Encode(CodecArgs),
    /// Expand an MDSC sequence corpus back into an MDTC corpus.
    Decode(CodecArgs),
    /// Report the compression of a grid or sequence corpus.
    Stats(StatsArgs),
    /// Cluster an MDCB codebook and write the class map.
    Collapse(CollapseArgs),
    /// Drop the corpus entries with the longest sequences.
    Prune(PruneArgs),
    /// Dump per-token positional features of an MDSC corpus.
    Features(FeaturesArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Greyscale,
    Color,
    Voxel,
    Raw,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Channel divisor for colour quantization.
    #[arg(long, default_value_t = ingest::COLOR_DIVISOR)]
    divisor: u8,
    /// Base class count for raw index grids.
    #[arg(long)]
    base_size: Option<u32>,
    #[arg(long)]
    out: PathBuf,
    /// PGM/PPM, MDTG/MDTC, MDVX or IDX files, concatenated in order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    extra_tokens: usize,
    /// Comma-separated neighbour axes, e.g. `1` for horizontal-only on 2D
    /// grids; all axes by default.
    #[arg(long)]
    axes: Option<String>,
    /// Base class count; defaults to the largest class in the corpus plus one.
    #[arg(long)]
    base_size: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CodecArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Check that the output converts back to the input.
    #[arg(long)]
    verify: bool,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// MDTC grids (compressed on the fly) or MDSC sequences.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct CollapseArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out_map: PathBuf,
    #[arg(long, default_value_t = collapse::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = collapse::DEFAULT_TOL)]
    tol: f64,
    /// MDTC corpus to snap to the collapsed classes.
    #[arg(long, requires = "out_corpus")]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    out_corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    /// MDSC sequences, or MDTC grids together with `--vocab`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Encoding width per axis; must be even.
    #[arg(long)]
    pe_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let summary = match cli.command {
        Command::Ingest(a) => cmd_ingest(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Encode(a) => cmd_encode(a)?,
        Command::Decode(a) => cmd_decode(a)?,
        Command::Stats(a) => cmd_stats(a)?,
        Command::Collapse(a) => cmd_collapse(a)?,
        Command::Prune(a) => cmd_prune(a)?,
        Command::Features(a) => cmd_features(a)?,
    };
    if cli.json {
        println!("{summary}");
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    read_vocab(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_grids(path: &Path) -> Result<Vec<TokenGrid>> {
    format::read_grids(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_sequences(path: &Path) -> Result<Vec<CompressedSequence>> {
    format::read_sequences(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn is_grid_corpus(bytes: &[u8]) -> bool {
    bytes.starts_with(format::GRID_CORPUS_MAGIC)
}

fn report_json(r: &CompressionReport) -> Value {
    json!({
        "sequences": r.lengths.len(),
        "total_tokens": r.total_tokens,
        "total_cells": r.total_cells,
        "compression": r.compression,
        "mean_length": r.mean_length,
        "max_length": r.max_length,
    })
}

fn cmd_ingest(a: IngestArgs) -> Result<Value> {
    let spec = match a.mode {
        Mode::Greyscale => IngestSpec::Greyscale,
        Mode::Color => IngestSpec::QuantizedColor { divisor: a.divisor },
        Mode::Voxel => IngestSpec::VoxelOccupancy,
        Mode::Raw => IngestSpec::RawIndices {
            base_size: a.base_size.context("--mode raw needs --base-size")?,
        },
    };
    let mut grids = Vec::new();
    for path in &a.inputs {
        let more = ingest::ingest_bytes(&read(path)?, &spec)
            .with_context(|| format!("ingesting {}", path.display()))?;
        grids.extend(more);
    }
    write(&a.out, &format::write_grids(&grids))?;
    info!("wrote {} grids to {}", grids.len(), a.out.display());
    Ok(json!({ "grids": grids.len(), "base_size": spec.base_size() }))
}

fn parse_axes(text: &str) -> Result<AxisMask> {
    let axes = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("invalid axis list {text:?}"))?;
    Ok(AxisMask::from_axes(&axes)?)
}

fn cmd_train(a: TrainArgs) -> Result<Value> {
    let corpus = load_grids(&a.corpus)?;
    ensure!(!corpus.is_empty(), "corpus {} is empty", a.corpus.display());
    let max_class = corpus
        .iter()
        .flat_map(|g| g.classes().iter().copied())
        .max()
        .unwrap_or(0);
    let base_size = a.base_size.unwrap_or(max_class + 1);
    let mut config = TrainConfig::new(a.extra_tokens);
    if let Some(text) = &a.axes {
        config.neighbor_axes = Some(parse_axes(text)?);
    }
    let cells: usize = corpus.iter().map(|g| g.len()).sum();
    let ndim = corpus[0].ndim();
    let out = train_with_progress(corpus, base_size, config, |r| {
        let c = r.rule.constellation;
        info!(
            "merge {} = ({}, {}, {:?}) count {} -> {:.2}%",
            r.rule.new_class,
            c.class_p,
            c.class_n,
            c.v_pn.components(ndim),
            r.count,
            100.0 * r.instances as f64 / cells as f64
        );
    })?;
    write(&a.out, &write_vocab(&out.vocab))?;
    let instances = out.history.last().map_or(cells, |r| r.instances);
    info!(
        "wrote {} merges to {}; training compression {:.2}%",
        out.vocab.merges().len(),
        a.out.display(),
        100.0 * instances as f64 / cells as f64
    );
    Ok(json!({
        "base_size": base_size,
        "merges": out.history.iter().map(|r| {
            let c = r.rule.constellation;
            json!({
                "new_class": r.rule.new_class,
                "class_p": c.class_p,
                "class_n": c.class_n,
                "v_pn": c.v_pn.components(out.vocab.ndim()),
                "count": r.count,
                "applied": r.applied,
            })
        }).collect::<Vec<_>>(),
        "compression": instances as f64 / cells as f64,
    }))
}

fn cmd_encode(a: CodecArgs) -> Result<Value> {
    let vocab = load_vocab(&a.vocab)?;
    let grids = load_grids(&a.input)?;
    let seqs = encode_all(&grids, &vocab)?;
    if a.verify {
        for (i, (s, g)) in seqs.iter().zip(&grids).enumerate() {
            let back = mdbpe::decode_to_base(s, &vocab)?;
            ensure!(back.classes() == g.classes(), "grid {i} does not roundtrip");
        }
        info!("verified {} roundtrips", seqs.len());
    }
    write(&a.out, &format::write_sequences(&seqs))?;
    let report = CompressionReport::from_sequences(&seqs)?;
    info!("compression {:.2}%", 100.0 * report.compression);
    Ok(report_json(&report))
}

fn encode_all(grids: &[TokenGrid], vocab: &Vocabulary) -> Result<Vec<CompressedSequence>> {
    use rayon::prelude::*;
    Ok(grids
        .par_iter()
        .map(|g| tokenize(g, vocab))
        .collect::<mdbpe::Result<Vec<_>>>()?)
}

fn cmd_decode(a: CodecArgs) -> Result<Value> {
    let vocab = load_vocab(&a.vocab)?;
    let seqs = load_sequences(&a.input)?;
    let grids = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            mdbpe::decode_to_base(s, &vocab).with_context(|| format!("decoding sequence {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    if a.verify {
        let again = encode_all(&grids, &vocab)?;
        for (i, (s, t)) in seqs.iter().zip(&again).enumerate() {
            ensure!(s == t, "sequence {i} does not roundtrip");
        }
        info!("verified {} roundtrips", seqs.len());
    }
    write(&a.out, &format::write_grids(&grids))?;
    Ok(json!({ "grids": grids.len() }))
}

fn cmd_stats(a: StatsArgs) -> Result<Value> {
    let vocab = load_vocab(&a.vocab)?;
    let bytes = read(&a.input)?;
    let report = if is_grid_corpus(&bytes) {
        compression_stats(&format::read_grids(&bytes)?, &vocab)?
    } else {
        let seqs = format::read_sequences(&bytes)?;
        for (i, s) in seqs.iter().enumerate() {
            decode(s, &vocab).with_context(|| format!("sequence {i} is invalid"))?;
        }
        CompressionReport::from_sequences(&seqs)?
    };
    println!("compression: {:.2}%", 100.0 * report.compression);
    println!(
        "sequences: {}  tokens: {}  cells: {}  mean length: {:.2}  max length: {}",
        report.lengths.len(),
        report.total_tokens,
        report.total_cells,
        report.mean_length,
        report.max_length
    );
    Ok(report_json(&report))
}

fn cmd_collapse(a: CollapseArgs) -> Result<Value> {
    let codebook: Codebook<f64> = format::read_codebook(&read(&a.codebook)?)?;
    let seeds = collapse::farthest_point_sample(&codebook, a.k)?;
    let km = collapse::kmeans_refine(&codebook, &seeds, a.max_iters, a.tol)?;
    info!(
        "k-means finished after {} iterations, objective {:.6}",
        km.iterations,
        km.objective.last().copied().unwrap_or(0.0)
    );
    let map = CollapseMap {
        centers: km.centers,
        assign: km.assign,
    };
    write(&a.out_map, &collapse::write_collapse_map(&map))?;
    if let (Some(input), Some(output)) = (&a.corpus, &a.out_corpus) {
        let snapped = collapse::snap(&load_grids(input)?, &map)?;
        write(output, &format::write_grids(&snapped))?;
        info!("snapped {} grids to {} classes", snapped.len(), map.k());
    }
    Ok(json!({
        "k": map.k(),
        "iterations": km.iterations,
        "objective": km.objective,
    }))
}

fn cmd_prune(a: PruneArgs) -> Result<Value> {
    let bytes = read(&a.input)?;
    let (kept, total, out) = if is_grid_corpus(&bytes) {
        let vocab = load_vocab(a.vocab.as_deref().context("pruning grids needs --vocab")?)?;
        let grids = format::read_grids(&bytes)?;
        let lengths = encode_all(&grids, &vocab)?.iter().map(|s| s.len()).collect::<Vec<_>>();
        let keep = collapse::prune(&lengths, a.fraction)?;
        let kept: Vec<TokenGrid> = keep.iter().map(|&i| grids[i].clone()).collect();
        (kept.len(), grids.len(), format::write_grids(&kept))
    } else {
        let seqs = format::read_sequences(&bytes)?;
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let keep = collapse::prune(&lengths, a.fraction)?;
        let kept: Vec<CompressedSequence> = keep.iter().map(|&i| seqs[i].clone()).collect();
        (kept.len(), seqs.len(), format::write_sequences(&kept))
    };
    write(&a.out, &out)?;
    info!("kept {kept} of {total}");
    Ok(json!({ "kept": kept, "dropped": total - kept }))
}

fn cmd_features(a: FeaturesArgs) -> Result<Value> {
    let vocab = load_vocab(&a.vocab)?;
    let seqs = load_sequences(&a.input)?;
    let pe = PositionalEncoding::<f32>::new(vocab.ndim(), a.pe_dim)?;
    if seqs.is_empty() {
        bail!("no sequences in {}", a.input.display());
    }
    let mut out = Vec::new();
    let mut tokens = 0;
    for (i, s) in seqs.iter().enumerate() {
        decode(s, &vocab).with_context(|| format!("sequence {i} is invalid"))?;
        let f = emit_features(s, &vocab, &pe)?;
        tokens += f.len();
        out.extend_from_slice(&format::write_features(&f, pe.width()));
    }
    write(&a.out, &out)?;
    Ok(json!({ "sequences": seqs.len(), "tokens": tokens, "width": pe.width() }))
}
