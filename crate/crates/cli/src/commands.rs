//! Subcommand implementations. Errors that stem from bad invocations (missing
//! files, invalid flag combinations) are tagged `Usage` and exit with code 2;
//! everything else exits 1.

use anyhow::{anyhow, Result};
use conrep_core::encoder::{
    derive_seed, encode, make_positive_pair, tokenize, EncoderConfig, EncoderParams,
};
use conrep_core::eval::{
    alignment_metric, normalize_rows, probe_train_eval, sts_evaluate, uniformity_metric,
    ProbeExample, ProbeSettings, StsExample,
};
use conrep_core::fd::{finite_difference_check, CoordPlan};
use conrep_core::objectives::{total_loss_graph, ObjectiveConfig};
use conrep_core::tape::Tape;
use conrep_core::tensor::Tensor;
use conrep_core::trainer::{sweep, train, Checkpoint};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::config::{echo, RunConfig};
use crate::data::{parse_corpus, parse_probe, parse_sts};
use crate::synth::{generate, write_files, SynthSizes};

/// Seed tag for the dropout pairs used by the alignment measurement.
pub const EVAL_PAIR_TAG: u64 = 0xE7A1;

/// Marker for errors that should exit with code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Usage {}

fn require_readable(path: &Path, flag: &str) -> Result<()> {
    if !path.is_file() {
        return Err(anyhow!(Usage(format!(
            "{flag}: file not found or not readable: {}",
            path.display()
        ))));
    }
    Ok(())
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| anyhow!(Usage(format!("--out: cannot create {}: {e}", out.display()))))
}

pub fn cmd_gen(out: &Path, seed: u64, sizes: SynthSizes) -> Result<()> {
    let data = generate(seed, sizes).map_err(|e| anyhow!(Usage(e.to_string())))?;
    write_files(&data, out)?;
    println!(
        "wrote corpus.txt ({}), sts.tsv ({}), probe.tsv ({}) to {}",
        data.corpus.len(),
        data.sts.len(),
        data.probe.len(),
        out.display()
    );
    Ok(())
}

fn write_trace_csv(path: &Path, trace: &[conrep_core::trainer::TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "contrast",
        "reconstruction",
        "total",
        "alignment_term",
        "uniformity_term",
    ])?;
    for row in trace {
        let b = &row.breakdown;
        w.write_record([
            row.step.to_string(),
            b.contrast_loss.to_string(),
            b.reconstruction_penalty.to_string(),
            b.total.to_string(),
            b.alignment_term.to_string(),
            b.uniformity_term.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_train(corpus: &Path, sts: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    require_readable(corpus, "--corpus")?;
    require_readable(sts, "--sts")?;
    ensure_out_dir(out)?;
    let sentences = parse_corpus(corpus)?;
    let dev = parse_sts(sts)?;
    let outcome = train(&sentences, &dev, &cfg.encoder, &cfg.train)?;
    std::fs::write(out.join("config.txt"), echo(cfg))?;
    outcome.best.save(&out.join("checkpoint.json"))?;
    write_trace_csv(&out.join("trace.csv"), &outcome.trace)?;
    println!(
        "best dev spearman {:.6} at step {} ({} steps trained)",
        outcome.best.dev_score,
        outcome.best.step,
        outcome.trace.len()
    );
    Ok(())
}

/// Alignment is measured on dropout-generated positive pairs of up to 64 dev
/// sentences (normalized train-mode embeddings); uniformity on their
/// normalized test-mode embeddings.
pub fn representation_metrics(
    ckpt: &Checkpoint,
    dev: &[StsExample],
    pair_seed: u64,
) -> Result<(f64, f64)> {
    let cfg = &ckpt.encoder_config;
    let batch: Vec<_> = dev
        .iter()
        .take(64)
        .map(|e| tokenize(&e.sentence_a, cfg.vocab_size))
        .collect::<conrep_core::Result<_>>()?;
    let pair = make_positive_pair(&ckpt.params, cfg, &batch, pair_seed)?;
    let alignment = alignment_metric(&normalize_rows(&pair.z1)?, &normalize_rows(&pair.z2)?)?;
    let test_embeddings = encode(&ckpt.params, cfg, &batch, 0, false)?;
    let uniformity = uniformity_metric(&normalize_rows(&test_embeddings)?)?;
    Ok((alignment, uniformity))
}

pub fn cmd_eval(
    checkpoint: &Path,
    sts: &Path,
    probe: Option<&Path>,
    out: &Path,
) -> Result<()> {
    require_readable(checkpoint, "--checkpoint")?;
    require_readable(sts, "--sts")?;
    ensure_out_dir(out)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let dev = parse_sts(sts)?;
    let spearman = sts_evaluate(&ckpt.params, &ckpt.encoder_config, &dev)?;
    let (alignment, uniformity) =
        representation_metrics(&ckpt, &dev, derive_seed(ckpt.train_config.seed, EVAL_PAIR_TAG))?;
    let probe_accuracy = match probe {
        None => None,
        Some(path) => {
            require_readable(path, "--probe")?;
            let examples = parse_probe(path)?;
            let (train_set, test_set) = split_probe(&examples);
            Some(probe_train_eval(
                &train_set,
                &test_set,
                &ckpt.params,
                &ckpt.encoder_config,
                &ProbeSettings::default(),
            )?)
        }
    };

    println!("spearman={spearman}");
    println!("alignment={alignment}");
    println!("uniformity={uniformity}");
    match probe_accuracy {
        Some(acc) => println!("probe_accuracy={acc}"),
        None => println!("probe_accuracy=null (no --probe file given)"),
    }

    let mut w = csv::Writer::from_path(out.join("eval.csv"))?;
    w.write_record(["spearman", "alignment", "uniformity", "probe_accuracy"])?;
    w.write_record([
        spearman.to_string(),
        alignment.to_string(),
        uniformity.to_string(),
        probe_accuracy.map_or("null".to_string(), |a| a.to_string()),
    ])?;
    w.flush()?;
    Ok(())
}

/// Even rows train, odd rows test.
fn split_probe(examples: &[ProbeExample]) -> (Vec<ProbeExample>, Vec<ProbeExample>) {
    let train = examples.iter().step_by(2).cloned().collect();
    let test = examples.iter().skip(1).step_by(2).cloned().collect();
    (train, test)
}

pub fn cmd_analyze(checkpoint: &Path, sts: &Path, out: &Path) -> Result<()> {
    require_readable(checkpoint, "--checkpoint")?;
    require_readable(sts, "--sts")?;
    ensure_out_dir(out)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let dev = parse_sts(sts)?;
    let spearman = sts_evaluate(&ckpt.params, &ckpt.encoder_config, &dev)?;
    let (alignment, uniformity) =
        representation_metrics(&ckpt, &dev, derive_seed(ckpt.train_config.seed, EVAL_PAIR_TAG))?;
    let mut w = csv::Writer::from_path(out.join("analyze.csv"))?;
    w.write_record(["alignment", "uniformity", "spearman"])?;
    w.write_record([
        alignment.to_string(),
        uniformity.to_string(),
        spearman.to_string(),
    ])?;
    w.flush()?;
    println!("alignment={alignment} uniformity={uniformity} spearman={spearman}");
    Ok(())
}

pub fn cmd_sweep(
    corpus: &Path,
    sts: &Path,
    out: &Path,
    cfg: &RunConfig,
    grid_batch: &[usize],
    grid_lr: &[f64],
    grid_lambda: &[f64],
) -> Result<()> {
    require_readable(corpus, "--corpus")?;
    require_readable(sts, "--sts")?;
    ensure_out_dir(out)?;
    let sentences = parse_corpus(corpus)?;
    let dev = parse_sts(sts)?;
    let batches = if grid_batch.is_empty() { vec![cfg.train.batch_size] } else { grid_batch.to_vec() };
    let lrs = if grid_lr.is_empty() { vec![cfg.train.learning_rate] } else { grid_lr.to_vec() };
    let lambdas = if grid_lambda.is_empty() { vec![cfg.train.lambda] } else { grid_lambda.to_vec() };
    let rows = sweep(&sentences, &dev, &cfg.encoder, &cfg.train, &batches, &lrs, &lambdas)?;
    std::fs::write(out.join("config.txt"), echo(cfg))?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(["batch", "lr", "lambda", "dev_spearman", "best_step"])?;
    for r in &rows {
        w.write_record([
            r.batch_size.to_string(),
            r.learning_rate.to_string(),
            r.lambda.to_string(),
            r.dev_score.to_string(),
            r.best_step.to_string(),
        ])?;
        println!(
            "batch={} lr={} lambda={} dev_spearman={:.6}",
            r.batch_size, r.learning_rate, r.lambda, r.dev_score
        );
    }
    w.flush()?;
    Ok(())
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Finite-difference check of the full joint loss through the encoder.
/// Dropout is disabled so the checked function is deterministic; coordinates
/// are sampled per tensor to keep the sweep fast.
pub fn gradcheck_max_error(
    enc_cfg: &EncoderConfig,
    sentences: &[String],
    coords_per_tensor: usize,
) -> Result<f64> {
    let mut cfg = *enc_cfg;
    cfg.dropout_p = 0.0;
    let batch: Vec<_> = sentences
        .iter()
        .take(4)
        .map(|s| tokenize(s, cfg.vocab_size))
        .collect::<conrep_core::Result<_>>()?;
    let objective = ObjectiveConfig {
        temperature: 0.05,
        lambda: 0.4,
    };
    let params = EncoderParams::init(&cfg, 0)?;
    let f = |tensors: &[Tensor]| -> conrep_core::Result<(f64, Vec<Tensor>)> {
        let p = EncoderParams::from_tensors(&cfg, tensors.to_vec())?;
        let mut tape = Tape::new();
        let vars = conrep_core::encoder::ParamVars::insert(&mut tape, &p)?;
        let z1 = conrep_core::encoder::encode_graph(&mut tape, &vars, &cfg, &batch, 1, true)?;
        let z2 = conrep_core::encoder::encode_graph(&mut tape, &vars, &cfg, &batch, 2, true)?;
        let loss = total_loss_graph(&mut tape, z1, z2, &objective)?;
        let value = tape.value(loss).scalar_value();
        let grads = tape.backward(loss)?;
        Ok((value, vars.ids().iter().map(|&i| grads[i].clone()).collect()))
    };
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let err = finite_difference_check(
        f,
        &tensors,
        1e-5,
        CoordPlan::Sampled {
            per_tensor: coords_per_tensor,
            seed: 7,
        },
    )?;
    Ok(err)
}

pub fn cmd_gradcheck(corpus: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let sentences = match corpus {
        Some(path) => {
            require_readable(path, "--corpus")?;
            parse_corpus(path)?
        }
        None => vec![
            "gradient checks need a few sentences".to_string(),
            "this batch exercises every parameter tensor".to_string(),
            "short one".to_string(),
            "and a slightly longer fourth sentence here".to_string(),
        ],
    };
    let err = gradcheck_max_error(&cfg.encoder, &sentences, 300)?;
    println!("max_relative_error={err}");
    if err < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(anyhow!(
            "gradient check failed: {err} >= {GRADCHECK_TOLERANCE}"
        ))
    }
}

pub fn parse_grid<T: std::str::FromStr>(raw: &Option<String>, flag: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    match raw {
        None => Ok(Vec::new()),
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|e| anyhow!(Usage(format!("{flag}: cannot parse {v:?}: {e}"))))
            })
            .collect(),
    }
}

pub fn out_dir(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref()
        .ok_or_else(|| anyhow!(Usage("--out is required".to_string())))
}

pub fn required_path<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| anyhow!(Usage(format!("{flag} is required"))))
}
