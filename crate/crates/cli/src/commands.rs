use std::net::SocketAddr;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};
use tapdecode::compute::verify::{check_primitives, Dims};
use tapdecode::compute::GradCheckConfig;
use tapdecode::dataset::{bundled_corpus, load_corpus, Dataset, Split, TouchPoint};
use tapdecode::dnd::{check_model_gradients, Checkpoint, Decoder, Variant};
use tapdecode::eval::{evaluate, EvalReport};
use tapdecode::par::Exec;
use tapdecode::simulator::{build_benchmark, prepare_benchmark, simulate_dataset};
use tapdecode::train::{ablation_csv, fit_with, run_ablation, write_log, AblationCell};
use tapdecode_serve::ServeState;

use crate::config::{RunConfig, SimArgs};
use crate::{Cli, Command};

pub const DEFAULT_CELLS: &str = "dnd:s2u64au,dnd:s2u64,bi-rnn:s3u32,uni-rnn:s3u64,bi-rnn:s2u64,gaussian-baseline";

/// What a subcommand reports back for the run log and exit code.
pub struct Outcome {
    pub passed: bool,
    pub failure: Option<String>,
    pub config: Value,
    pub result: Value,
}

impl Outcome {
    fn ok(config: Value, result: Value) -> Self {
        Self {
            passed: true,
            failure: None,
            config,
            result,
        }
    }
}

fn print_config(cli: &Cli, cfg: &RunConfig) -> Value {
    let value = serde_json::to_value(cfg).expect("run config serializes");
    if cli.json {
        eprintln!("{value}");
    } else {
        eprintln!("# effective config");
        eprint!("{}", cfg.to_toml());
        eprintln!("# end config");
    }
    value
}

fn corpus(sim: &SimArgs) -> Result<Vec<String>> {
    let c = match &sim.corpus {
        Some(p) => load_corpus(&std::fs::read_to_string(p).with_context(|| format!("reading corpus {}", p.display()))?),
        None => bundled_corpus(),
    };
    if c.is_empty() {
        bail!("corpus has no typeable sentences");
    }
    Ok(c)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn split(cfg: &RunConfig, sim: &SimArgs, dataset: Option<&Path>) -> Result<Split> {
    Ok(match dataset {
        Some(p) => prepare_benchmark(&load_dataset(p)?, &cfg.benchmark)?,
        None => build_benchmark(&cfg.benchmark, &corpus(sim)?, Exec::default())?,
    })
}

fn effective(cli: &Cli, sim: Option<&SimArgs>, f: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(sim) = sim {
        sim.apply(&mut cfg);
    }
    f(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn report_line(r: &EvalReport) -> String {
    format!(
        "cer {:.2} wer {:.2} ms/word {:.3} ({} phrases, {} chars, {} words)",
        r.cer, r.wer, r.ms_per_word, r.n_phrases, r.n_chars, r.n_words
    )
}

/// Parses cells such as `dnd:s2u64au`, `bi-rnn:s3u32` or `gaussian-baseline`.
pub fn parse_cells(spec: &str) -> Result<Vec<AblationCell>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (variant, shape) = item.split_once(':').unwrap_or((item, ""));
            let variant: Variant = variant.parse().map_err(|e| anyhow!("cell {item:?}: {e}"))?;
            if variant == Variant::GaussianBaseline {
                return Ok(AblationCell::new(variant, 0, 0, false));
            }
            let bad = || anyhow!("cell {item:?}: expected shape like s2u64 or s2u64au");
            let rest = shape.strip_prefix('s').ok_or_else(bad)?;
            let (stacks, rest) = rest.split_once('u').ok_or_else(bad)?;
            let (units, aux) = match rest.strip_suffix("au") {
                Some(u) => (u, true),
                None => (rest, false),
            };
            Ok(AblationCell::new(
                variant,
                stacks.parse().map_err(|_| bad())?,
                units.parse().map_err(|_| bad())?,
                aux,
            ))
        })
        .collect()
}

/// Reads touches as one `x,y` or `x y` pair per non-empty line.
pub fn parse_touches(text: &str) -> Result<Vec<TouchPoint>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| anyhow!("line {}: {e}", i + 1))?;
            match v.as_slice() {
                [x, y] if (0.0..=1.0).contains(x) && (0.0..=1.0).contains(y) => Ok(TouchPoint::new(*x, *y)),
                _ => bail!("line {}: expected two coordinates in [0, 1]", i + 1),
            }
        })
        .collect()
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate { sim, out } => {
            let cfg = effective(cli, Some(sim), |_| {})?;
            let config = print_config(cli, &cfg);
            let d = simulate_dataset(&cfg.benchmark.sim, &corpus(sim)?, Exec::default())?;
            d.save(out).with_context(|| format!("writing {}", out.display()))?;
            let result = json!({
                "users": d.users().len(),
                "phrases": d.len(),
                "keystrokes": d.keystrokes(),
                "out": out,
            });
            if cli.json {
                println!("{result}");
            } else {
                println!(
                    "{} users, {} phrases, {} keystrokes -> {}",
                    d.users().len(),
                    d.len(),
                    d.keystrokes(),
                    out.display()
                );
            }
            Ok(Outcome::ok(config, result))
        }
        Command::Train {
            sim,
            model,
            dataset,
            epochs,
            out,
        } => {
            let cfg = effective(cli, Some(sim), |c| {
                model.apply(&mut c.train.model);
                if let Some(e) = epochs {
                    c.train.max_epochs = *e;
                }
            })?;
            let config = print_config(cli, &cfg);
            let split = split(&cfg, sim, dataset.as_deref())?;
            let fit = fit_with(&split.train, &split.val, &cfg.train, Exec::default(), |r| {
                if cli.json {
                    eprintln!("{}", serde_json::to_string(r).expect("epoch record serializes"));
                } else {
                    eprintln!(
                        "epoch {:>3} train {:.4} val {:.4} lr {:.6}{}",
                        r.epoch,
                        r.train_loss,
                        r.val_loss,
                        r.lr,
                        if r.is_best { " *" } else { "" }
                    );
                }
            })?;
            fit.best.save(out).with_context(|| format!("writing {}", out.display()))?;
            let log_path = out.with_extension("log.jsonl");
            let f = std::fs::File::create(&log_path).with_context(|| format!("writing {}", log_path.display()))?;
            write_log(&fit.log, std::io::BufWriter::new(f))?;
            let result = json!({
                "checkpoint": out,
                "epoch_log": log_path,
                "best_epoch": fit.best.header.epoch,
                "metrics": fit.best.header.metrics,
                "epochs_run": fit.log.len(),
            });
            if cli.json {
                println!("{result}");
            } else {
                println!("best epoch {} -> {} (log {})", fit.best.header.epoch, out.display(), log_path.display());
            }
            Ok(Outcome::ok(config, result))
        }
        Command::Eval {
            sim,
            model,
            checkpoint,
            dataset,
        } => {
            let mut ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            if !model.is_empty() {
                let mut expected = ckpt.header.config.clone();
                model.apply(&mut expected);
                ckpt = Checkpoint::load_expecting(checkpoint, &expected)
                    .with_context(|| format!("loading {} as {}", checkpoint.display(), expected.cell_name()))?;
            }
            let cfg = effective(cli, Some(sim), |c| c.train.model = ckpt.header.config.clone())?;
            let config = print_config(cli, &cfg);
            let test = match dataset {
                Some(p) => load_dataset(p)?,
                None => split(&cfg, sim, None)?.test,
            };
            let report = evaluate(&ckpt.model, &test)?;
            let result = serde_json::to_value(&report)?;
            if cli.json {
                println!("{result}");
            } else {
                println!("{}", report_line(&report));
            }
            Ok(Outcome::ok(config, result))
        }
        Command::Ablate {
            sim,
            dataset,
            epochs,
            cells,
            out,
        } => {
            let cells = parse_cells(cells)?;
            let cfg = effective(cli, Some(sim), |c| {
                if let Some(e) = epochs {
                    c.train.max_epochs = *e;
                }
            })?;
            let config = print_config(cli, &cfg);
            let split = split(&cfg, sim, dataset.as_deref())?;
            let rows = run_ablation(&cells, &split, &cfg.train, Exec::default(), |r| {
                eprintln!(
                    "{} {}: {} epochs in {:.0}s, cer {:.2} wer {:.2}",
                    r.model,
                    r.parameter,
                    r.log.len(),
                    r.train_seconds,
                    r.cer,
                    r.wer
                );
            })?;
            let csv = ablation_csv(&rows);
            if let Some(p) = out {
                std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
            }
            if cli.json {
                println!("{}", serde_json::to_string(&rows)?);
            } else {
                print!("{csv}");
            }
            Ok(Outcome::ok(config, serde_json::to_value(&rows)?))
        }
        Command::Decode { checkpoint, input } => {
            let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            let touches = parse_touches(&text)?;
            if touches.is_empty() {
                bail!("{} contains no touches", input.display());
            }
            let config = serde_json::to_value(&ckpt.header.config)?;
            let decoded = ckpt.model.decode(&touches)?;
            let result = json!({ "text": decoded, "touches": touches.len() });
            if cli.json {
                println!("{result}");
            } else {
                println!("{decoded}");
            }
            Ok(Outcome::ok(config, result))
        }
        Command::Gradcheck { model, seed, length } => {
            let cfg = effective(cli, None, |c| model.apply(&mut c.train.model))?;
            let config = print_config(cli, &cfg);
            if !cfg.train.model.variant.is_neural() {
                bail!("gradcheck needs a neural variant");
            }
            let gc = GradCheckConfig {
                seed: *seed,
                exec: Exec::default(),
                ..GradCheckConfig::default()
            };
            let mut worst = 0.0f64;
            let dims = Dims { m: 3, k: 2, n: 4 };
            for (name, r) in check_primitives(*seed, dims, &gc)? {
                eprintln!("{name:<24} {:.3e}", r.max_rel_error);
                worst = worst.max(r.max_rel_error);
            }
            let m = &cfg.train.model;
            let r = check_model_gradients(m, &[*length], *seed, &gc)?;
            worst = worst.max(r.max_rel_error);
            let passed = worst < 1e-4;
            let result = json!({
                "model": format!("{} {}", m.variant, m.cell_name()),
                "max_rel_error": worst,
                "model_max_rel_error": r.max_rel_error,
                "worst": r.worst,
                "checked": r.checked,
                "passed": passed,
            });
            if cli.json {
                println!("{result}");
            } else {
                println!(
                    "{} {}: {} entries, max rel. error {:.3e} ({})",
                    m.variant,
                    m.cell_name(),
                    r.checked,
                    worst,
                    if passed { "ok" } else { "FAILED" }
                );
            }
            Ok(Outcome {
                passed,
                failure: (!passed).then(|| format!("max rel. error {worst:.3e} is not below 1e-4")),
                config,
                result,
            })
        }
        Command::Serve { checkpoint, port, host } => {
            let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let config = serde_json::to_value(&ckpt.header.config)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
            let state = ServeState::new(ckpt.model);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on ws://{addr}/ws");
            rt.block_on(tapdecode_serve::serve(addr, state))?;
            Ok(Outcome::ok(config, json!({ "addr": addr.to_string() })))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_parse() {
        let cells = parse_cells(DEFAULT_CELLS).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], AblationCell::new(Variant::Dnd, 2, 64, true));
        assert_eq!(cells[2], AblationCell::new(Variant::BiRnn, 3, 32, false));
        assert_eq!(cells[5].variant, Variant::GaussianBaseline);
        assert!(parse_cells("dnd:x").is_err());
        assert!(parse_cells("lstm:s1u2").is_err());
    }

    #[test]
    fn touches_parse() {
        let t = parse_touches("0.1,0.2\n\n# note\n0.5 0.75\n").unwrap();
        assert_eq!(t, vec![TouchPoint::new(0.1, 0.2), TouchPoint::new(0.5, 0.75)]);
        assert!(parse_touches("0.1").is_err());
        assert!(parse_touches("0.1,2").is_err());
        assert!(parse_touches("a,b").is_err());
    }
}
