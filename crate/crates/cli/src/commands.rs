use std::fmt::Display;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use uniseq::baselines::{layout, LayoutKind};
use uniseq::bench::{
    gen_synthetic_task, prepare_task, records_exponent, run_benchmark, run_multitask_study, write_csv, BenchConfig,
    SyntheticRule,
};
use uniseq::codec::{
    analyze, read_codebooks, read_grid, read_wav, rvq_decode, rvq_encode, synthesize, train_codebooks, write_codebooks,
    write_grid, write_wav, CodebookSet, TokenGrid,
};
use uniseq::inference::generate;
use uniseq::model::{ModelConfig, MultiScaleModel};
use uniseq::task::{serialize_example, serialize_prefix, Payload, TemplateRegistry};
use uniseq::train::{generation_accuracy, train_model};

use crate::config::RunConfig;
use crate::{BenchArgs, Cli, CliError, Command, GenerateArgs, InspectArgs, MultitaskArgs, TrainArgs};

/// Largest T of the default benchmark grid without `--long`.
const DESK_MAX_FRAMES: usize = 256;
const LONG_FRAMES: usize = 1000;

fn data<E: Display>(ctx: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{ctx}: {e}"))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(data(path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(data(path.display()))
}

fn load_books(path: &Path) -> Result<CodebookSet, CliError> {
    read_codebooks(open(path)?).map_err(data(path.display()))
}

fn load_grid(path: &Path) -> Result<TokenGrid, CliError> {
    read_grid(open(path)?).map_err(data(path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data(path.display()))?;
    std::fs::write(path, text + "\n").map_err(data(path.display()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    match cli.command {
        Command::CodecTrain(a) => {
            let mut corpus = Vec::with_capacity(a.inputs.len());
            for path in &a.inputs {
                let signal = read_wav(open(path)?).map_err(data(path.display()))?;
                corpus.push(analyze(&signal, &cfg.codec).map_err(data(path.display()))?);
            }
            let books = train_codebooks(&corpus, &cfg.codec, a.iters, cfg.seed).map_err(data("codebook training"))?;
            write_codebooks(&books, create(&a.out)?).map_err(data(a.out.display()))?;
            println!("{} levels × {} codes of dimension {} → {}", books.levels(), books.size(), books.dim(), a.out.display());
        }
        Command::CodecEncode(a) => {
            let books = load_books(&a.codebooks)?;
            let signal = read_wav(open(&a.input)?).map_err(data(a.input.display()))?;
            let frames = analyze(&signal, &cfg.codec).map_err(data(a.input.display()))?;
            let grid = rvq_encode(&frames, &books).map_err(data(a.input.display()))?;
            write_grid(&grid, create(&a.out)?).map_err(data(a.out.display()))?;
            println!("{} frames × {} levels → {}", grid.frames(), grid.levels(), a.out.display());
        }
        Command::CodecDecode(a) => {
            let books = load_books(&a.codebooks)?;
            let grid = load_grid(&a.input)?;
            decode_to_wav(&grid, &books, &cfg, &a.out).map_err(data(a.input.display()))?;
            println!("{} frames → {}", grid.frames(), a.out.display());
        }
        Command::Train(a) => train(&mut cfg, a)?,
        Command::Generate(a) => generate_cmd(&cfg, a)?,
        Command::Bench(a) => bench(&cfg, a)?,
        Command::Multitask(a) => multitask(&mut cfg, a)?,
        Command::Inspect(a) => inspect(&cfg, a)?,
    }
    Ok(())
}

fn decode_to_wav(grid: &TokenGrid, books: &CodebookSet, cfg: &RunConfig, out: &Path) -> uniseq::error::Result<()> {
    let frames = rvq_decode(grid, books)?;
    let signal = synthesize(&frames, &cfg.codec)?;
    write_wav(&signal, File::create(out)?)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    rule: SyntheticRule,
    steps_run: usize,
    final_loss: Option<f64>,
    validation: &'a [(usize, f64)],
    eval_exact_match: f64,
    losses: &'a [f64],
}

fn train(cfg: &mut RunConfig, a: TrainArgs) -> Result<(), CliError> {
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    let spec = &cfg.task;
    spec.validate().map_err(data("task"))?;
    let vocab = cfg.task_vocab(spec).map_err(data("vocab"))?;
    let registry = TemplateRegistry::default_registry();
    let mc = ModelConfig { n_q: spec.n_q, vocab_size: vocab.size(), ..cfg.model.clone() };
    let task = prepare_task(spec, &vocab, &registry, mc.max_patches).map_err(data("task"))?;
    let mut model = MultiScaleModel::new(mc, cfg.seed).map_err(data("model"))?;
    eprintln!(
        "training {} parameters on {} {} sequences ({} held out)",
        model.param_count(),
        task.train.len(),
        spec.rule,
        task.valid.len()
    );
    let report = train_model(&mut model, &task.train, &task.valid, &cfg.train).map_err(data("training"))?;
    let acc = generation_accuracy(&model, &vocab, &registry, &task.eval).map_err(data("evaluation"))?;
    model.save(&a.out).map_err(data(a.out.display()))?;
    let summary = TrainSummary {
        rule: spec.rule,
        steps_run: report.steps_run,
        final_loss: report.losses.last().copied(),
        validation: &report.validation,
        eval_exact_match: acc,
        losses: &report.losses,
    };
    println!(
        "steps {}  final loss {:.4}  eval exact-match {:.4}  → {}",
        summary.steps_run,
        summary.final_loss.unwrap_or(f64::NAN),
        acc,
        a.out.display()
    );
    if let Some(path) = &a.report {
        write_json(path, &summary)?;
    }
    Ok(())
}

fn generate_cmd(cfg: &RunConfig, a: GenerateArgs) -> Result<(), CliError> {
    let model = MultiScaleModel::load(&a.model).map_err(data(a.model.display()))?;
    let spec = &cfg.task;
    let vocab = cfg.task_vocab(spec).map_err(data("vocab"))?;
    let registry = TemplateRegistry::default_registry();
    let conditions = match (spec.rule, a.phones, &a.input) {
        (SyntheticRule::TokenTts, Some(phones), None) => vec![Payload::Discrete(phones), Payload::Audio(TokenGrid::empty(spec.n_q))],
        (SyntheticRule::Denoise, None, Some(path)) => vec![Payload::Audio(load_grid(path)?)],
        (SyntheticRule::TokenTts, ..) => return Err(CliError::Usage("the token-tts task is conditioned with --phones".into())),
        (SyntheticRule::Denoise, ..) => return Err(CliError::Usage("the denoise task is conditioned with --in <grid>".into())),
    };
    let template = registry.get(spec.task).map_err(data("template"))?;
    let prefix = serialize_prefix(&vocab, template, &conditions).map_err(data("condition"))?;
    let mut sample = cfg.sample.clone();
    sample.k = a.k.unwrap_or(sample.k);
    sample.temperature = a.temperature.unwrap_or(sample.temperature);
    // the configured budget is a ceiling; a smaller model context wins unless a flag asks otherwise
    sample.max_patches = a.max_patches.unwrap_or(sample.max_patches.min(model.config().max_patches));
    let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
    let out = generate(&model, &vocab, &prefix, &sample, &mut rng).map_err(data("generation"))?;
    write_grid(&out.grid, create(&a.out)?).map_err(data(a.out.display()))?;
    let status = serde_json::to_value(out.status).map_err(data("status"))?;
    println!("{} frames, status {}  → {}", out.grid.frames(), status.as_str().unwrap_or("?"), a.out.display());
    if let (Some(books), Some(wav)) = (&a.codebooks, &a.wav) {
        let books = load_books(books)?;
        decode_to_wav(&out.grid, &books, cfg, wav).map_err(data(wav.display()))?;
        println!("audio → {}", wav.display());
    }
    Ok(())
}

fn bench(cfg: &RunConfig, a: BenchArgs) -> Result<(), CliError> {
    let mut bc: BenchConfig = cfg.bench.clone();
    if let Some(names) = &a.archs {
        bc.archs = names
            .iter()
            .map(|n| n.parse::<LayoutKind>().map_err(|e| CliError::Usage(e.to_string())))
            .collect::<Result<_, _>>()?;
    }
    match a.frames {
        Some(f) => bc.frames = f,
        None if a.long && !bc.frames.contains(&LONG_FRAMES) => bc.frames.push(LONG_FRAMES),
        None => {}
    }
    if let Some(l) = a.levels {
        bc.levels = l;
    }
    bc.iters = a.iters.unwrap_or(bc.iters);
    bc.warmup = a.warmup.unwrap_or(bc.warmup);
    if !a.long {
        if let Some(&t) = bc.frames.iter().find(|&&t| t > DESK_MAX_FRAMES) {
            return Err(CliError::Usage(format!("T = {t} exceeds the desk grid ({DESK_MAX_FRAMES}); pass --long")));
        }
    }
    bc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let records = run_benchmark(&bc).map_err(data("benchmark"))?;
    let mut w = create(&a.out)?;
    write_csv(&records, &mut w).and_then(|_| Ok(w.flush()?)).map_err(data(a.out.display()))?;
    println!("{} records → {}", records.len(), a.out.display());
    let mut distinct = bc.frames.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() >= 3 {
        for &arch in &bc.archs {
            for &nq in &bc.levels {
                if let Ok(e) = records_exponent(&records, arch, nq) {
                    println!("{arch:>12} n_q={nq}: time ∝ T^{e:.2}");
                }
            }
        }
    }
    Ok(())
}

fn multitask(cfg: &mut RunConfig, a: MultitaskArgs) -> Result<(), CliError> {
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    let alpha = a.alpha.unwrap_or(cfg.multitask.alpha);
    let report = run_multitask_study(&cfg.multitask.tasks, alpha, &cfg.model, &cfg.train).map_err(data("multitask"))?;
    println!("alpha {alpha}  joint steps {}  draws {:?}", report.joint_steps, report.task_draws);
    println!("{:>10} {:>8} {:>8} {:>12}", "task", "single", "joint", "single steps");
    for t in &report.tasks {
        println!("{:>10} {:>8.4} {:>8.4} {:>12}", t.rule, t.single, t.joint, t.single_steps);
    }
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn inspect(cfg: &RunConfig, a: InspectArgs) -> Result<(), CliError> {
    if let Some(name) = &a.layout {
        let kind: LayoutKind = name.parse().map_err(|e: uniseq::error::Error| CliError::Usage(e.to_string()))?;
        let (t, nq) = (a.frames.unwrap_or_default(), a.levels.unwrap_or_default());
        let spec = layout(kind, t, nq).map_err(|e| CliError::Usage(e.to_string()))?;
        print!("{}", spec.render());
    } else if let Some(path) = &a.grid {
        let grid = load_grid(path)?;
        println!("T={} n_q={}", grid.frames(), grid.levels());
        for t in 0..grid.frames() {
            let row: Vec<String> = grid.frame(t).iter().map(u32::to_string).collect();
            println!("{t:>6}: {}", row.join(" "));
        }
    } else if let Some(n) = a.example {
        let spec = &cfg.task;
        spec.validate().map_err(data("task"))?;
        let vocab = cfg.task_vocab(spec).map_err(data("vocab"))?;
        let (train, _) = gen_synthetic_task(spec, &vocab).map_err(data("task"))?;
        let Some(ex) = train.get(n) else {
            return Err(CliError::Usage(format!("example {n} out of range (corpus has {})", train.len())));
        };
        let seq = serialize_example(&vocab, &TemplateRegistry::default_registry(), ex).map_err(data("task"))?;
        print!("{}", seq.dump(&vocab));
    }
    Ok(())
}
