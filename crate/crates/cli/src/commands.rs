use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nanosoc::basecaller::{evaluate_identity, train, CnnSpec, Example, TrainHyper, TRAIN_LOG_HEADER};
use nanosoc::formats::{bin, config, fastx, fmix, nsig, truth, weights};
use nanosoc::formats::fastx::FastxRecord;
use nanosoc::perf::{
    basecaller_working_set, perf_report, SocConfig, WeightPrecision, WorkloadTrace,
};
use nanosoc::pipeline::{
    demultiplex, detect_pathogen, filter_reads, trim_primer, Barcode, Basecaller, ChunkParams,
    DetectInput, DetectParams,
};
use nanosoc::seed_index::{FmIndex, DEFAULT_OCC_STRIDE, DEFAULT_SA_STRIDE};
use nanosoc::signal_sim::{
    default_pore_model, gen_dataset, gen_pore_model, GenomeSource, RawSignal, ReadLenDist, SimParams,
    DEFAULT_NOISE_SCALE, DEFAULT_PORE_SEED, SIGNAL_DIR, TRUTH_FILE,
};

use crate::settings::{check_top_level, display, top_level, Section};
use crate::{BasecallArgs, Cli, CliError, Command, DemuxArgs, DetectArgs, FilterArgs, IndexArgs, PerfArgs, SimulateArgs, TrimArgs, TrainArgs};

const DEFAULT_SEED: u64 = 1;

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(path) => {
            let table = config::read_file(path)?;
            check_top_level(&table, Command::NAMES)?;
            Some(table)
        }
        None => None,
    };
    let cfg = config.as_ref();
    let threads = cli.threads.or(top_level::<usize>(cfg, "threads")?);
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed.or(top_level::<u64>(cfg, "seed")?).unwrap_or(DEFAULT_SEED);
    let section = |name: &str| Section::from_config(cfg, name);
    match cli.command {
        Command::Simulate(a) => simulate(a, &section("simulate")?, seed),
        Command::Train(a) => train_cmd(a, &section("train")?, seed),
        Command::Basecall(a) => basecall(a, &section("basecall")?),
        Command::Index(a) => index(a, &section("index")?),
        Command::Detect(a) => detect(a, &section("detect")?),
        Command::Demux(a) => demux(a, &section("demux")?),
        Command::Trim(a) => trim(a, &section("trim")?),
        Command::Filter(a) => filter(a, &section("filter")?),
        Command::PerfReport(a) => perf(a, &section("perf-report")?),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    Ok(bin::write_all(path, text.as_bytes())?)
}

fn first_record(path: &Path) -> CliResult<FastxRecord> {
    let mut records = fastx::read_file(path)?;
    if records.is_empty() {
        return Err(CliError::Runtime(nanosoc::Error::malformed(path, 0, "no records")));
    }
    if records.len() > 1 {
        warn!("{}: using the first of {} records", path.display(), records.len());
    }
    Ok(records.swap_remove(0))
}

/// NSIG files under `path`: the file itself, `path/signals/*.nsig` for a
/// dataset directory, or `path/*.nsig`. Sorted by file name.
fn signal_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dir = if path.join(SIGNAL_DIR).is_dir() {
        path.join(SIGNAL_DIR)
    } else {
        path.to_path_buf()
    };
    let entries = std::fs::read_dir(&dir).map_err(|e| nanosoc::Error::io(&dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| nanosoc::Error::io(&dir, e))?.path();
        if p.extension().is_some_and(|x| x == "nsig") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn load_signals(path: &Path) -> CliResult<Vec<RawSignal>> {
    signal_files(path)?
        .iter()
        .map(|p| nsig::read_file(p).map_err(CliError::from))
        .collect()
}

fn load_spec(path: Option<&Path>) -> CliResult<CnnSpec> {
    match path {
        None => Ok(CnnSpec::default_spec()),
        Some(p) => {
            let text = String::from_utf8(bin::read_all(p)?)
                .map_err(|_| CliError::Usage(format!("{}: not UTF-8", p.display())))?;
            Ok(CnnSpec::from_toml(&text)?)
        }
    }
}

fn simulate(a: SimulateArgs, s: &Section, seed: u64) -> CliResult {
    let genome = s.pick_path(a.genome, "genome")?;
    let random_len = s.pick_opt(a.random_len, "random_len")?;
    let n_reads = s.pick(a.n_reads, "n_reads", 100)?;
    let noise = s.pick(a.noise, "noise", DEFAULT_NOISE_SCALE)?;
    let defaults = ReadLenDist::default();
    let read_len = ReadLenDist {
        mean: s.pick(a.read_len_mean, "read_len_mean", defaults.mean)?,
        sd: s.pick(a.read_len_sd, "read_len_sd", defaults.sd)?,
        min: defaults.min,
    };
    let pore_seed = s.pick_opt(a.pore_seed, "pore_seed")?;
    let mean_dwell = s.pick_opt(a.mean_dwell, "mean_dwell")?;
    let out = s.require_path(a.out, "out")?;
    s.finish()?;

    let source = match (genome, random_len) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --genome or --random-len".into())),
        (None, None) => return Err(CliError::Usage("one of --genome or --random-len is required".into())),
        (None, Some(len)) => GenomeSource::Random { len },
        (Some(path), None) => {
            let rec = first_record(&path)?;
            GenomeSource::Sequence {
                id: rec.id,
                sequence: rec.seq,
            }
        }
    };
    let mut pore = match pore_seed {
        Some(ps) if ps != DEFAULT_PORE_SEED => gen_pore_model(ps, default_pore_model().context_k)?,
        _ => default_pore_model(),
    };
    if let Some(d) = mean_dwell {
        pore.mean_dwell = d;
    }
    let params = SimParams {
        pore,
        noise_scale: noise,
        read_len,
        ..SimParams::default()
    };
    let summary = gen_dataset(&source, n_reads, &params, &out, seed)?;
    println!(
        "wrote {} reads to {}",
        summary.signal_paths.len(),
        display(&summary.out_dir)
    );
    Ok(())
}

fn load_examples(data: &Path) -> CliResult<Vec<Example>> {
    let rows = truth::read_file(&data.join(TRUTH_FILE))?;
    rows.iter()
        .map(|r| {
            let sig = nsig::read_file(&data.join(&r.signal_file))?;
            Ok(Example::new(&r.read_id, &sig.samples, &r.sequence)?)
        })
        .collect()
}

fn train_cmd(a: TrainArgs, s: &Section, seed: u64) -> CliResult {
    let data = s.require_path(a.data, "data")?;
    let out = s.require_path(a.out, "out")?;
    let spec_path = s.pick_path(a.spec, "spec")?;
    let d = TrainHyper::default();
    let hyper = TrainHyper {
        epochs: s.pick(a.epochs, "epochs", d.epochs)?,
        batch_size: s.pick(a.batch_size, "batch_size", d.batch_size)?,
        learning_rate: s.pick(a.lr, "lr", d.learning_rate)?,
        ..d
    };
    let holdout = s.pick(a.holdout, "holdout", 0)?;
    let log_path = s.pick_path(a.log, "log")?;
    s.finish()?;

    let spec = load_spec(spec_path.as_deref())?;
    let examples = load_examples(&data)?;
    if holdout >= examples.len() {
        return Err(CliError::Usage(format!(
            "holdout {holdout} leaves no training reads out of {}",
            examples.len()
        )));
    }
    let (train_set, test_set) = examples.split_at(examples.len() - holdout);
    let mut log = String::new();
    let _ = writeln!(log, "{TRAIN_LOG_HEADER}");
    let w = train(train_set, &spec, &hyper, seed, &mut |e| {
        info!("{e}");
        let _ = writeln!(log, "{e}");
    })?;
    weights::write_file(&out, &spec, &w)?;
    if let Some(p) = log_path {
        write_text(&p, &log)?;
    }
    if !test_set.is_empty() {
        let mut ids = evaluate_identity(&spec, &w, test_set)?;
        ids.sort_by(f64::total_cmp);
        println!("holdout median identity {:.4} over {} reads", ids[ids.len() / 2], ids.len());
    }
    println!("wrote {}", display(&out));
    Ok(())
}

fn load_basecaller(weights_path: &Path, int8: bool, chunk: ChunkParams) -> CliResult<Basecaller> {
    let (spec, w) = weights::read_file(weights_path)?;
    let bc = Basecaller::new(spec, w)?.with_chunking(chunk);
    Ok(if int8 { bc.quantized()? } else { bc })
}

fn chunk_params(s: &Section, chunk_len: Option<usize>, overlap: Option<usize>) -> CliResult<ChunkParams> {
    let d = ChunkParams::default();
    Ok(ChunkParams {
        chunk_len: s.pick(chunk_len, "chunk_len", d.chunk_len)?,
        overlap: s.pick(overlap, "overlap", d.overlap)?,
    })
}

fn write_trace(path: &Path, trace: &WorkloadTrace) -> CliResult {
    let json = serde_json::to_string_pretty(trace).expect("trace serializes");
    write_text(path, &(json + "\n"))
}

fn basecall(a: BasecallArgs, s: &Section) -> CliResult {
    let weights_path = s.require_path(a.weights, "weights")?;
    let signals = s.require_path(a.signals, "signals")?;
    let out = s.require_path(a.out, "out")?;
    let int8 = s.pick_flag(a.int8, "int8")?;
    let chunk = chunk_params(s, a.chunk_len, a.overlap)?;
    let trace_path = s.pick_path(a.trace, "trace")?;
    s.finish()?;

    let bc = load_basecaller(&weights_path, int8, chunk)?;
    let sigs = load_signals(&signals)?;
    let called = bc.call_all(&sigs)?;
    let mut trace = WorkloadTrace::default();
    for c in &called {
        trace.merge(&c.trace);
        if c.constant_signal {
            warn!("{}: constant signal", c.record.id);
        }
    }
    let records: Vec<FastxRecord> = called.into_iter().map(|c| c.record).collect();
    fastx::write_file(&out, &records)?;
    if let Some(p) = trace_path {
        write_trace(&p, &trace)?;
    }
    println!("basecalled {} signals into {}", records.len(), display(&out));
    Ok(())
}

fn index(a: IndexArgs, s: &Section) -> CliResult {
    let reference = s.require_path(a.reference, "reference")?;
    let out = s.require_path(a.out, "out")?;
    let occ = s.pick(a.occ_stride, "occ_stride", DEFAULT_OCC_STRIDE)?;
    let sa = s.pick(a.sa_stride, "sa_stride", DEFAULT_SA_STRIDE)?;
    s.finish()?;
    let rec = first_record(&reference)?;
    let idx = FmIndex::build_with(&rec.seq, occ, sa)?;
    fmix::write_file(&out, &idx)?;
    println!("indexed {} bases of {} into {}", idx.text_len(), rec.id, display(&out));
    Ok(())
}

fn detect(a: DetectArgs, s: &Section) -> CliResult {
    let index_path = s.pick_path(a.index, "index")?;
    let reference = s.require_path(a.reference, "reference")?;
    let reads_path = s.pick_path(a.reads, "reads")?;
    let signals_path = s.pick_path(a.signals, "signals")?;
    let weights_path = s.pick_path(a.weights, "weights")?;
    let int8 = s.pick_flag(a.int8, "int8")?;
    let chunk = chunk_params(s, None, None)?;
    let d = DetectParams::default();
    let mut map = d.map;
    map.min_identity = s.pick(a.min_identity, "min_identity", map.min_identity)?;
    let mut params = DetectParams {
        theta_frac: s.pick(a.theta_frac, "theta_frac", d.theta_frac)?,
        theta_id: s.pick(a.theta_id, "theta_id", d.theta_id)?,
        min_read_len: s.pick(a.min_read_len, "min_read_len", d.min_read_len)?,
        ed_only: s.pick_flag(a.ed_only, "ed_only")?,
        map,
        ..d
    };
    let pathogen_id = s.pick_opt(a.pathogen_id, "pathogen_id")?;
    let out = s.pick_path(a.out, "out")?;
    let trace_path = s.pick_path(a.trace, "trace")?;
    s.finish()?;

    let rec = first_record(&reference)?;
    params.pathogen_id = pathogen_id.unwrap_or_else(|| rec.id.clone());
    let idx = match index_path {
        Some(p) => Some(fmix::read_file(&p)?),
        None => None,
    };
    if idx.is_none() && !params.ed_only {
        return Err(CliError::Usage("--index is required unless --ed-only is set".into()));
    }
    let report = match (reads_path, signals_path) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --reads or --signals".into())),
        (None, None) => return Err(CliError::Usage("one of --reads or --signals is required".into())),
        (Some(rp), None) => {
            let reads = fastx::read_file(&rp)?;
            detect_pathogen(DetectInput::Reads(&reads), idx.as_ref(), &rec.seq, &params)?
        }
        (None, Some(sp)) => {
            let wp = weights_path
                .ok_or_else(|| CliError::Usage("--signals requires --weights".into()))?;
            let bc = load_basecaller(&wp, int8, chunk)?;
            let sigs = load_signals(&sp)?;
            let input = DetectInput::Signals {
                signals: &sigs,
                basecaller: Some(&bc),
            };
            detect_pathogen(input, idx.as_ref(), &rec.seq, &params)?
        }
    };
    if let Some(p) = out {
        write_text(&p, &(report.to_json() + "\n"))?;
    }
    if let Some(p) = trace_path {
        write_trace(&p, &report.trace)?;
    }
    println!("{}", report.summary());
    Ok(())
}

fn demux(a: DemuxArgs, s: &Section) -> CliResult {
    let reads = s.require_path(a.reads, "reads")?;
    let barcodes = s.require_path(a.barcodes, "barcodes")?;
    let max = s.pick(a.max_hamming, "max_hamming", 1)?;
    let out = s.require_path(a.out, "out")?;
    s.finish()?;
    let bcs = fastx::read_file(&barcodes)?
        .into_iter()
        .map(|r| Barcode::new(r.id, &r.seq))
        .collect::<nanosoc::Result<Vec<_>>>()?;
    let reads = fastx::read_file(&reads)?;
    let assignments = demultiplex(&reads, &bcs, max)?;
    let mut text = String::from("#read_id\tbarcode\tdistance\n");
    let mut assigned = 0;
    for a in &assignments {
        assigned += usize::from(a.barcode.is_some());
        let _ = writeln!(
            text,
            "{}\t{}\t{}",
            a.read_id,
            a.barcode.as_deref().unwrap_or("unassigned"),
            a.distance.map_or("-".to_string(), |d| d.to_string())
        );
    }
    write_text(&out, &text)?;
    println!("assigned {assigned} of {} reads", assignments.len());
    Ok(())
}

fn trim(a: TrimArgs, s: &Section) -> CliResult {
    let reads = s.require_path(a.reads, "reads")?;
    let primers = s.require_path(a.primers, "primers")?;
    let window = s.pick(a.window, "window", 100)?;
    let max_ed = s.pick(a.max_ed, "max_ed", 2)?;
    let out = s.require_path(a.out, "out")?;
    let report_path = s.pick_path(a.report, "report")?;
    s.finish()?;
    let primers: Vec<Vec<u8>> = fastx::read_file(&primers)?.into_iter().map(|r| r.seq).collect();
    if primers.is_empty() {
        return Err(CliError::Usage("no primers given".into()));
    }
    let records = fastx::read_file(&reads)?;
    let mut out_records = Vec::with_capacity(records.len());
    let mut report = String::from("#read_id\tkept_start\tkept_end\tleading\ttrailing\n");
    let hit = |h: &Option<nanosoc::pipeline::PrimerHit>| {
        h.as_ref().map_or("-".to_string(), |h| {
            format!("{}:{}-{}:ed{}", h.primer, h.start, h.end, h.distance)
        })
    };
    for r in records {
        let t = trim_primer(&r.seq, &primers, window, max_ed)?;
        let _ = writeln!(
            report,
            "{}\t{}\t{}\t{}\t{}",
            r.id,
            t.start,
            t.end,
            hit(&t.report.leading),
            hit(&t.report.trailing)
        );
        let qual = r.qual.map(|q| q[t.start..t.end].to_vec());
        out_records.push(FastxRecord {
            id: r.id,
            seq: t.seq,
            qual,
        });
    }
    fastx::write_file(&out, &out_records)?;
    if let Some(p) = report_path {
        write_text(&p, &report)?;
    }
    println!("trimmed {} reads", out_records.len());
    Ok(())
}

fn filter(a: FilterArgs, s: &Section) -> CliResult {
    let reads = s.require_path(a.reads, "reads")?;
    let min_len = s.pick(a.min_len, "min_len", 0)?;
    let min_identity = s.pick_opt(a.min_identity, "min_identity")?;
    let truth_path = s.pick_path(a.truth, "truth")?;
    let out = s.require_path(a.out, "out")?;
    let log_path = s.pick_path(a.log, "log")?;
    s.finish()?;
    let truth_map: HashMap<String, Vec<u8>> = match truth_path {
        Some(p) => truth::read_file(&p)?
            .into_iter()
            .map(|r| (r.read_id, r.sequence))
            .collect(),
        None => HashMap::new(),
    };
    if min_identity.is_some() && truth_map.is_empty() {
        warn!("--min-identity has no effect without --truth");
    }
    let records = fastx::read_file(&reads)?;
    let total = records.len();
    let (kept, log) = filter_reads(records, min_len, min_identity, &truth_map);
    fastx::write_file(&out, &kept)?;
    if let Some(p) = log_path {
        let mut text = String::from("#read_id\treason\tvalue\tthreshold\n");
        for e in &log {
            let line = match &e.reason {
                nanosoc::pipeline::FilterReason::TooShort { len, min_len } => {
                    format!("{}\ttoo_short\t{len}\t{min_len}", e.read_id)
                }
                nanosoc::pipeline::FilterReason::LowIdentity { identity, min_identity } => {
                    format!("{}\tlow_identity\t{identity:.6}\t{min_identity}", e.read_id)
                }
            };
            let _ = writeln!(text, "{line}");
        }
        write_text(&p, &text)?;
    }
    println!("kept {} of {total} reads", kept.len());
    Ok(())
}

fn perf(a: PerfArgs, s: &Section) -> CliResult {
    let trace_path = s.pick_path(a.trace, "trace")?;
    let soc_path = s.pick_path(a.soc, "soc")?;
    let samples = s.pick_opt(a.basecall_samples, "basecall_samples")?;
    let ed_pairs = s.pick(a.ed_pairs, "ed_pairs", 0)?;
    let ed_len = s.pick(a.ed_len, "ed_len", 100)?;
    let spec_path = s.pick_path(a.spec, "spec")?;
    let precision = s.pick(a.precision, "precision", "int8".to_string())?;
    let activation_bytes = s.pick(a.activation_bytes, "activation_bytes", 64 * 1024)?;
    let format = s.pick(a.format, "format", "table".to_string())?;
    let out = s.pick_path(a.out, "out")?;
    s.finish()?;

    let precision = match precision.as_str() {
        "int8" => WeightPrecision::Int8,
        "float32" => WeightPrecision::Float32,
        other => return Err(CliError::Usage(format!("unknown precision `{other}`"))),
    };
    if format != "table" && format != "json" {
        return Err(CliError::Usage(format!("unknown format `{format}`")));
    }
    let soc = match soc_path {
        None => SocConfig::default(),
        Some(p) => {
            let text = String::from_utf8(bin::read_all(&p)?)
                .map_err(|_| CliError::Usage(format!("{}: not UTF-8", p.display())))?;
            SocConfig::from_toml(&text)?
        }
    };
    let spec = load_spec(spec_path.as_deref())?;
    let mut trace = match trace_path {
        None => WorkloadTrace::default(),
        Some(p) => {
            let bytes = bin::read_all(&p)?;
            serde_json::from_slice(&bytes).map_err(|e| {
                CliError::Runtime(nanosoc::Error::malformed(&p, 0, format!("trace JSON: {e}")))
            })?
        }
    };
    if let Some(n) = samples {
        trace.add_forward(&spec, n)?;
    }
    trace.add_ed(ed_len, ed_len, ed_pairs);
    let ws = basecaller_working_set(&spec, precision, activation_bytes);
    let report = perf_report(&trace, &[ws], &soc)?;
    let text = if format == "json" {
        report.to_json() + "\n"
    } else {
        report.to_table()
    };
    match out {
        Some(p) => write_text(&p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
