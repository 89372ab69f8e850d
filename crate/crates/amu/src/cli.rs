//! Command-line interface. Every subcommand writes `metrics.txt` and
//! `manifest.txt` (plus its own artifacts) into `--out`.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use amu_core::eval::{self, EvalReport, SweepParameter};
use amu_core::metrics::{assess_candidate, select_aux, zero_shot_accuracy};
use amu_core::store::{l2_normalize, sample_few_shot};
use amu_core::synth::{self, AUX_ENCODER_ID, CLIP_ENCODER_ID, HEAD_ENCODER_ID};
use amu_core::training::{grid_search, train, EpochRecord};
use amu_core::{FeatureStore, FewShotTask, SplitTag, ZeroShotHead};

use crate::amuf;
use crate::config::{self, Settings};
use crate::manifest::RunManifest;
use crate::records::{self, pct, Record, Table};

pub const METRICS_FILE: &str = "metrics.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CLIP_FILE: &str = "clip.amuf";
pub const AUX_FILE: &str = "aux.amuf";
pub const HEAD_FILE: &str = "head.amuf";
pub const PROBE_FILE: &str = "probe.amuf";
pub const SPEC_FILE: &str = "spec.txt";

#[derive(Debug, Parser)]
#[command(name = "amu", version, about = "Few-shot logit-bias classification over precomputed embeddings")]
pub struct Cli {
    /// Log filter when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded two-view synthetic benchmark.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Validate feature files and optionally L2-normalize them.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Feature files to check.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Write unit-norm copies instead of validated copies.
        #[arg(long)]
        normalize: bool,
    },
    /// Superiority and complementarity of candidate auxiliary features.
    Rank {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        tune: TuneFlags,
    },
    /// Train the bias branch and report validation and test accuracy.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        tune: TuneFlags,
    },
    /// Score a saved probe.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        tune: TuneFlags,
        #[arg(long)]
        probe: PathBuf,
    },
    /// Individual against joint training of the bias branch.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        tune: TuneFlags,
    },
    /// Zero-shot, probe, cache and fusion baselines side by side.
    Baselines {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        tune: TuneFlags,
    },
    /// Accuracy as lambda or rho varies.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        tune: TuneFlags,
        /// `lambda` or `rho`.
        #[arg(long, default_value = "lambda")]
        parameter: String,
        /// Comma-separated values; defaults to sweep_lambdas / sweep_rhos.
        #[arg(long)]
        values: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub dim_clip: Option<String>,
    #[arg(long)]
    pub dim_aux: Option<String>,
    #[arg(long)]
    pub train_per_class: Option<String>,
    #[arg(long)]
    pub val_per_class: Option<String>,
    #[arg(long)]
    pub test_per_class: Option<String>,
    #[arg(long)]
    pub view_correlation: Option<String>,
    #[arg(long)]
    pub clip_noise: Option<String>,
    #[arg(long)]
    pub aux_noise: Option<String>,
    #[arg(long)]
    pub head_noise: Option<String>,
    #[arg(long)]
    pub confidence_link: Option<String>,
    #[arg(long)]
    pub logit_scale: Option<String>,
}

#[derive(Debug, Args)]
pub struct DataFlags {
    /// Directory holding clip.amuf, aux.amuf and head.amuf.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub clip: Option<PathBuf>,
    /// Auxiliary feature file; repeat for several candidates.
    #[arg(long)]
    pub aux: Vec<PathBuf>,
    #[arg(long)]
    pub head: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneFlags {
    #[arg(long)]
    pub shots: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    /// individual, joint or mtfi.
    #[arg(long)]
    pub mode: Option<String>,
    /// zero, feature or auto.
    #[arg(long)]
    pub init: Option<String>,
    /// constant or cosine.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub rho: Option<String>,
    /// kurtosis, max, top2, energy or none.
    #[arg(long)]
    pub kappa: Option<String>,
    #[arg(long)]
    pub grid_lambdas: Option<String>,
    #[arg(long)]
    pub grid_rhos: Option<String>,
    #[arg(long)]
    pub grid_betas: Option<String>,
    /// Grid-search lambda, rho and beta on validation before training.
    #[arg(long)]
    pub search: bool,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub cmy_split: Option<String>,
    #[arg(long)]
    pub buckets: Option<String>,
    #[arg(long)]
    pub cache_sharpness: Option<String>,
    #[arg(long)]
    pub top_k: Option<String>,
    #[arg(long)]
    pub top_m: Option<String>,
}

fn push(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<String>) {
    if let Some(v) = v {
        out.push((key, v.clone()));
    }
}

impl SynthFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        push(&mut v, "classes", &self.classes);
        push(&mut v, "dim_clip", &self.dim_clip);
        push(&mut v, "dim_aux", &self.dim_aux);
        push(&mut v, "train_per_class", &self.train_per_class);
        push(&mut v, "val_per_class", &self.val_per_class);
        push(&mut v, "test_per_class", &self.test_per_class);
        push(&mut v, "view_correlation", &self.view_correlation);
        push(&mut v, "clip_noise", &self.clip_noise);
        push(&mut v, "aux_noise", &self.aux_noise);
        push(&mut v, "head_noise", &self.head_noise);
        push(&mut v, "confidence_link", &self.confidence_link);
        push(&mut v, "logit_scale", &self.logit_scale);
        v
    }
}

impl TuneFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        push(&mut v, "shots", &self.shots);
        push(&mut v, "epochs", &self.epochs);
        push(&mut v, "lr", &self.lr);
        push(&mut v, "batch_size", &self.batch_size);
        push(&mut v, "lambda", &self.lambda);
        push(&mut v, "mode", &self.mode);
        push(&mut v, "init", &self.init);
        push(&mut v, "schedule", &self.schedule);
        push(&mut v, "weight_decay", &self.weight_decay);
        push(&mut v, "beta", &self.beta);
        push(&mut v, "rho", &self.rho);
        push(&mut v, "kappa", &self.kappa);
        push(&mut v, "grid_lambdas", &self.grid_lambdas);
        push(&mut v, "grid_rhos", &self.grid_rhos);
        push(&mut v, "grid_betas", &self.grid_betas);
        if self.search {
            v.push(("search", "true".into()));
        }
        push(&mut v, "split", &self.split);
        push(&mut v, "cmy_split", &self.cmy_split);
        push(&mut v, "buckets", &self.buckets);
        push(&mut v, "cache_sharpness", &self.cache_sharpness);
        push(&mut v, "top_k", &self.top_k);
        push(&mut v, "top_m", &self.top_m);
        v
    }
}

/// One invocation: resolved settings, output directory, manifest and the
/// metric records gathered so far.
struct Run {
    out: PathBuf,
    settings: Settings,
    manifest: RunManifest,
    records: Vec<Record>,
}

impl Run {
    fn start(command: &str, common: &Common, flags: Vec<(&'static str, String)>) -> anyhow::Result<Self> {
        let mut settings = Settings::default();
        let mut config_source = None;
        if let Some(path) = &common.config {
            let (pairs, bytes) = config::load(path)?;
            settings.apply_all(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
            config_source = Some((path.clone(), bytes));
        }
        if let Some(seed) = common.seed {
            settings.seed = seed;
        }
        settings.apply_all(flags.iter().map(|(k, v)| (*k, v.as_str())))?;
        settings.finish();
        let config = settings.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let mut manifest = RunManifest::new(command, config, settings.seed);
        if let Some((path, bytes)) = config_source {
            manifest.note_input(&path, &bytes);
        }
        fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
        Ok(Self { out: common.out.clone(), settings, manifest, records: Vec::new() })
    }

    fn read_store(&mut self, path: &Path) -> anyhow::Result<FeatureStore> {
        let bytes = self.manifest.read_input(path)?;
        amuf::decode(&bytes).with_context(|| format!("loading {}", path.display()))
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.out.join(name);
        self.manifest.write_output(&path, bytes)?;
        Ok(())
    }

    fn record(&mut self, r: Record) {
        self.records.push(r);
    }

    /// Writes the metric records, re-reads and validates every output, then
    /// writes the manifest.
    fn finish(mut self) -> anyhow::Result<()> {
        let text = records::render(&self.records);
        self.write(METRICS_FILE, text.as_bytes())?;
        for out in &self.manifest.outputs {
            let bytes = amuf::read_bytes(&out.path)?;
            if crate::manifest::sha256_hex(&bytes) != out.sha256 {
                bail!("{} changed after it was written", out.path.display());
            }
            match out.path.extension().and_then(|e| e.to_str()) {
                Some("amuf") => {
                    amuf::decode(&bytes).with_context(|| format!("validating {}", out.path.display()))?;
                }
                Some("txt") if out.path.file_name().is_some_and(|n| n == METRICS_FILE) => {
                    records::parse(std::str::from_utf8(&bytes)?)?;
                }
                _ => {}
            }
        }
        let manifest = self.manifest.render();
        amuf::write_bytes(&self.out.join(MANIFEST_FILE), manifest.as_bytes())?;
        Ok(())
    }
}

/// Resolved input stores.
struct Data {
    clip: FeatureStore,
    auxes: Vec<FeatureStore>,
    head: ZeroShotHead,
}

impl Data {
    fn aux(&self) -> &FeatureStore {
        &self.auxes[0]
    }
}

fn load_data(run: &mut Run, flags: &DataFlags) -> anyhow::Result<Data> {
    let from_dir = |name: &str| flags.data.as_ref().map(|d| d.join(name));
    let clip_path = flags.clip.clone().or_else(|| from_dir(CLIP_FILE)).context("need --clip or --data")?;
    let head_path = flags.head.clone().or_else(|| from_dir(HEAD_FILE)).context("need --head or --data")?;
    let aux_paths = if flags.aux.is_empty() {
        vec![from_dir(AUX_FILE).context("need --aux or --data")?]
    } else {
        flags.aux.clone()
    };
    let clip = run.read_store(&clip_path)?;
    let head_bytes = run.manifest.read_input(&head_path)?;
    let head = amuf::decode_head(&head_bytes).with_context(|| format!("loading {}", head_path.display()))?;
    head.ensure_compatible(&clip).context("head does not match the CLIP-view store")?;
    let mut auxes = Vec::with_capacity(aux_paths.len());
    for p in &aux_paths {
        let aux = run.read_store(p)?;
        aux.ensure_aligned(&clip)
            .with_context(|| format!("{} is not aligned with the CLIP-view store", p.display()))?;
        auxes.push(aux);
    }
    Ok(Data { clip, auxes, head })
}

fn single_aux(data: &Data, command: &str) -> anyhow::Result<()> {
    if data.auxes.len() != 1 {
        bail!("`{command}` takes exactly one auxiliary store, got {}", data.auxes.len());
    }
    Ok(())
}

fn task_for(run: &mut Run, data: &Data) -> anyhow::Result<FewShotTask> {
    let task = sample_few_shot(&data.clip, run.settings.shots, run.settings.seed)?;
    run.record(
        Record::new("task")
            .field("classes", task.class_count())
            .field("shots", task.shots)
            .field("train", task.train_flat().len())
            .field("val", task.val_indices.len())
            .field("test", task.test_indices.len()),
    );
    Ok(task)
}

/// Whitespace-free rendering of an encoder id for records.
fn token(s: &str) -> String {
    if s.is_empty() {
        "-".into()
    } else {
        s.split_whitespace().collect::<Vec<_>>().join("_")
    }
}

fn eval_record(split: SplitTag, r: &EvalReport) -> Record {
    Record::new("eval")
        .field("split", split.name())
        .field("count", r.count)
        .field("fused_acc", r.fused_acc)
        .field("zero_shot_acc", r.zero_shot_acc)
        .field("aux_acc", r.aux_branch_acc)
        .opt("cmy", r.cmy)
        .field("kappa_mean", r.kappa_stats.mean)
        .field("kappa_min", r.kappa_stats.min)
        .field("kappa_max", r.kappa_stats.max)
        .field("kappa_fallbacks", r.kappa_stats.fallback_count)
        .field("kappa_clamps", r.kappa_stats.clamp_count)
        .opt("confidence_trend", r.confidence_histogram.accuracy_trend())
}

fn epoch_record(epoch: usize, e: &EpochRecord) -> Record {
    Record::new("epoch")
        .field("epoch", epoch)
        .field("loss", e.total_loss)
        .field("aux_loss", e.aux_loss)
        .field("fusion_loss", e.fusion_loss)
        .field("train_aux_acc", e.aux_accuracy)
        .field("train_fused_acc", e.fused_accuracy)
}

fn list_values(raw: &str) -> anyhow::Result<Vec<f64>> {
    raw.split(',').map(|x| x.trim().parse::<f64>().with_context(|| format!("bad value {x:?} in {raw:?}"))).collect()
}

/// Terminal output is a convenience; a closed pipe must not fail the run.
fn say(text: impl Display) {
    use std::io::Write as _;
    let _ = write!(std::io::stdout().lock(), "{text}");
}

fn show(table: &Table) {
    say(table);
}

fn cell(x: impl Display) -> String {
    x.to_string()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { common, synth } => run_synth(&common, &synth),
        Command::Ingest { common, inputs, normalize } => run_ingest(&common, &inputs, normalize),
        Command::Rank { common, data, tune } => run_rank(&common, &data, &tune),
        Command::Train { common, data, tune } => run_train(&common, &data, &tune),
        Command::Eval { common, data, tune, probe } => run_eval(&common, &data, &tune, &probe),
        Command::Compare { common, data, tune } => run_compare(&common, &data, &tune),
        Command::Baselines { common, data, tune } => run_baselines(&common, &data, &tune),
        Command::Sweep { common, data, tune, parameter, values } => {
            run_sweep(&common, &data, &tune, &parameter, values.as_deref())
        }
    }
}

fn run_synth(common: &Common, flags: &SynthFlags) -> anyhow::Result<()> {
    let mut run = Run::start("synth", common, flags.pairs())?;
    let spec = run.settings.synth;
    let bench = synth::generate(&spec)?;
    run.write(CLIP_FILE, &amuf::encode(&bench.clip)?)?;
    run.write(AUX_FILE, &amuf::encode(&bench.aux)?)?;
    run.write(HEAD_FILE, &amuf::encode_head(&bench.head, HEAD_ENCODER_ID)?)?;
    let echo: String = run
        .settings
        .entries()
        .into_iter()
        .filter(|(k, _)| SYNTH_KEYS.contains(k))
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    run.write(SPEC_FILE, echo.as_bytes())?;

    let test = bench.clip.indices_with_tag(SplitTag::Test);
    let zero_shot = if test.is_empty() { None } else { Some(zero_shot_accuracy(&bench.clip, &bench.head, &test)?) };
    run.record(
        Record::new("synth")
            .field("samples", bench.clip.len())
            .field("classes", spec.classes)
            .field("dim_clip", spec.dim_clip)
            .field("dim_aux", spec.dim_aux)
            .field("clip_encoder", CLIP_ENCODER_ID)
            .field("aux_encoder", AUX_ENCODER_ID)
            .opt("test_zero_shot_acc", zero_shot),
    );
    say(format!("wrote {} samples x {} classes to {}\n", bench.clip.len(), spec.classes, run.out.display()));
    run.finish()
}

const SYNTH_KEYS: [&str; 13] = [
    "seed",
    "classes",
    "dim_clip",
    "dim_aux",
    "train_per_class",
    "val_per_class",
    "test_per_class",
    "view_correlation",
    "clip_noise",
    "aux_noise",
    "head_noise",
    "confidence_link",
    "logit_scale",
];

fn run_ingest(common: &Common, inputs: &[PathBuf], normalize: bool) -> anyhow::Result<()> {
    let mut run = Run::start("ingest", common, Vec::new())?;
    let mut table = Table::new(&["file", "encoder", "N", "d", "C", "train", "val", "test", "min_norm", "max_norm"]);
    let mut names = std::collections::BTreeSet::new();
    for path in inputs {
        let name = path.file_name().context("input path has no file name")?.to_string_lossy().into_owned();
        if !names.insert(name.clone()) {
            bail!("two inputs share the file name {name}");
        }
        let store = run.read_store(path)?;
        let store = if normalize { l2_normalize(&store)? } else { store };
        let norms: Vec<f64> = (0..store.len()).map(|i| amu_core::numerics::norm(&store.row_f64(i))).collect();
        let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let counts = [SplitTag::Train, SplitTag::Val, SplitTag::Test].map(|t| store.indices_with_tag(t).len());
        run.write(&name, &amuf::encode(&store)?)?;
        run.record(
            Record::new("ingest")
                .field("file", token(&name))
                .field("encoder", token(store.encoder_id()))
                .field("samples", store.len())
                .field("dim", store.dim())
                .field("classes", store.class_count())
                .field("train", counts[0])
                .field("val", counts[1])
                .field("test", counts[2])
                .field("normalized", normalize)
                .field("min_norm", min)
                .field("max_norm", max),
        );
        table.row(vec![
            name,
            store.encoder_id().into(),
            cell(store.len()),
            cell(store.dim()),
            cell(store.class_count()),
            cell(counts[0]),
            cell(counts[1]),
            cell(counts[2]),
            format!("{min:.6}"),
            format!("{max:.6}"),
        ]);
    }
    show(&table);
    run.finish()
}

fn run_rank(common: &Common, flags: &DataFlags, tune: &TuneFlags) -> anyhow::Result<()> {
    let mut run = Run::start("rank", common, tune.pairs())?;
    let data = load_data(&mut run, flags)?;
    let task = task_for(&mut run, &data)?;
    let s = run.settings.clone();
    let mut reports = Vec::new();
    let mut table = Table::new(&["encoder", "SUP", "CMY", "fused", "beta"]);
    for aux in &data.auxes {
        let r = assess_candidate(aux, &data.clip, &data.head, &task, &s.train, &s.grid.betas, s.cmy_split)?;
        run.record(
            Record::new("candidate")
                .field("encoder", token(&r.encoder_id))
                .field("sup", r.sup)
                .field("cmy", r.cmy)
                .field("fused_acc", r.fused_acc)
                .field("fused_beta", r.fused_beta),
        );
        table.row(vec![
            r.encoder_id.clone(),
            pct(r.sup),
            format!("{:.3}", r.cmy),
            pct(r.fused_acc),
            cell(r.fused_beta),
        ]);
        reports.push(r);
    }
    let n = reports.len();
    let clamp = |want: usize, what: &str| {
        if want > n {
            log::warn!("{what} = {want} exceeds the {n} candidates; using {n}");
        }
        want.min(n)
    };
    let (k, m) = (clamp(s.top_k, "top_k"), clamp(s.top_m, "top_m"));
    let chosen = select_aux(&reports, k, m)?;
    let chosen: Vec<String> = chosen.into_iter().collect();
    run.record(
        Record::new("selection")
            .field("top_k", k)
            .field("top_m", m)
            .field("selected", if chosen.is_empty() { "-".into() } else { token(&chosen.join(",")) }),
    );
    show(&table);
    let listed = if chosen.is_empty() { "none".into() } else { chosen.join(", ") };
    say(format!("selected (top-{k} SUP and top-{m} CMY): {listed}\n"));
    run.finish()
}

fn run_train(common: &Common, flags: &DataFlags, tune: &TuneFlags) -> anyhow::Result<()> {
    let mut run = Run::start("train", common, tune.pairs())?;
    let data = load_data(&mut run, flags)?;
    single_aux(&data, "train")?;
    let task = task_for(&mut run, &data)?;
    let s = run.settings.clone();
    let (train_cfg, fusion) = if s.search {
        let sel = grid_search(&task, data.aux(), &data.clip, &data.head, &s.train, &s.fusion, &s.grid)?;
        run.record(
            Record::new("search")
                .field("evaluated", sel.evaluated.len())
                .field("lambda", sel.best.lambda)
                .field("rho", sel.best.rho)
                .field("beta", sel.best.beta)
                .field("val_fused_acc", sel.best.val_accuracy),
        );
        (sel.train, sel.fusion)
    } else {
        (s.train, s.fusion)
    };
    run.record(
        Record::new("config")
            .field("mode", train_cfg.mode.name())
            .field("lambda", train_cfg.effective_lambda())
            .field("init", train_cfg.effective_init().name())
            .field("kappa", fusion.kappa_method.name())
            .field("rho", fusion.rho)
            .field("beta", fusion.beta),
    );
    let outcome = train(&task, data.aux(), &data.clip, &data.head, &train_cfg, &fusion)?;
    run.record(epoch_record(0, &outcome.history.initial));
    for (i, e) in outcome.history.epochs.iter().enumerate() {
        run.record(epoch_record(i + 1, e));
    }
    let mut table = Table::new(&["split", "fused", "zero-shot", "aux", "CMY"]);
    for (split, indices) in [(SplitTag::Val, &task.val_indices), (SplitTag::Test, &task.test_indices)] {
        if indices.is_empty() {
            continue;
        }
        let r = eval::evaluate(&outcome.probe, &data.head, &data.clip, data.aux(), &fusion, indices, s.buckets)?;
        table.row(vec![
            split.name().into(),
            pct(r.fused_acc),
            pct(r.zero_shot_acc),
            pct(r.aux_branch_acc),
            r.cmy.map_or("-".into(), |c| format!("{c:.3}")),
        ]);
        run.record(eval_record(split, &r));
    }
    run.write(PROBE_FILE, &amuf::encode_probe(&outcome.probe, data.aux().encoder_id())?)?;
    show(&table);
    run.finish()
}

fn run_eval(common: &Common, flags: &DataFlags, tune: &TuneFlags, probe_path: &Path) -> anyhow::Result<()> {
    let mut run = Run::start("eval", common, tune.pairs())?;
    let data = load_data(&mut run, flags)?;
    single_aux(&data, "eval")?;
    let bytes = run.manifest.read_input(probe_path)?;
    let probe = amuf::decode_probe(&bytes).with_context(|| format!("loading {}", probe_path.display()))?;
    let s = run.settings.clone();
    let indices = data.clip.indices_with_tag(s.split);
    if indices.is_empty() {
        bail!("no samples tagged {}", s.split.name());
    }
    let r = eval::evaluate(&probe, &data.head, &data.clip, data.aux(), &s.fusion, &indices, s.buckets)?;
    run.record(eval_record(s.split, &r));
    let mut table = Table::new(&["bucket", "low", "high", "correct", "wrong", "accuracy"]);
    for (i, b) in r.confidence_histogram.buckets.iter().enumerate() {
        run.record(
            Record::new("bucket")
                .field("index", i)
                .field("low", b.low)
                .field("high", b.high)
                .field("correct", b.correct)
                .field("wrong", b.wrong)
                .opt("accuracy", b.accuracy()),
        );
        table.row(vec![
            cell(i),
            format!("{:.3}", b.low),
            format!("{:.3}", b.high),
            cell(b.correct),
            cell(b.wrong),
            b.accuracy().map_or("-".into(), pct),
        ]);
    }
    say(format!(
        "{} samples: fused {} zero-shot {} aux {}\n",
        r.count,
        pct(r.fused_acc),
        pct(r.zero_shot_acc),
        pct(r.aux_branch_acc)
    ));
    show(&table);
    run.finish()
}

fn run_compare(common: &Common, flags: &DataFlags, tune: &TuneFlags) -> anyhow::Result<()> {
    let mut run = Run::start("compare", common, tune.pairs())?;
    let data = load_data(&mut run, flags)?;
    let task = task_for(&mut run, &data)?;
    let s = run.settings.clone();
    let auxes: Vec<&FeatureStore> = data.auxes.iter().collect();
    let rows = eval::compare_strategies(&task, &data.clip, &auxes, &data.head, &s.train, s.fusion.beta)?;
    let mut table = Table::new(&["encoder", "individual aux", "joint aux", "joint + zero-shot", "zero-shot"]);
    for r in &rows {
        run.record(
            Record::new("strategy")
                .field("encoder", token(&r.encoder_id))
                .field("individual_aux_acc", r.individual_aux_acc)
                .field("joint_aux_acc", r.joint_aux_acc)
                .field("joint_fused_acc", r.joint_fused_acc)
                .field("zero_shot_acc", r.zero_shot_acc),
        );
        table.row(vec![
            r.encoder_id.clone(),
            pct(r.individual_aux_acc),
            pct(r.joint_aux_acc),
            pct(r.joint_fused_acc),
            pct(r.zero_shot_acc),
        ]);
    }
    show(&table);
    run.finish()
}

fn run_baselines(common: &Common, flags: &DataFlags, tune: &TuneFlags) -> anyhow::Result<()> {
    let mut run = Run::start("baselines", common, tune.pairs())?;
    let data = load_data(&mut run, flags)?;
    single_aux(&data, "baselines")?;
    let task = task_for(&mut run, &data)?;
    let s = run.settings.clone();
    let rows =
        eval::baselines(&task, &data.clip, data.aux(), &data.head, &s.train, &s.fusion, &s.grid, s.cache_sharpness)?;
    let mut table = Table::new(&["method", "val", "test", "beta", "rho"]);
    for r in &rows {
        run.record(
            Record::new("baseline")
                .field("name", r.name)
                .field("single_branch", r.single_branch)
                .field("val_acc", r.val_acc)
                .field("test_acc", r.test_acc)
                .opt("beta", r.beta)
                .opt("rho", r.rho),
        );
        table.row(vec![
            r.name.into(),
            pct(r.val_acc),
            pct(r.test_acc),
            r.beta.map_or("-".into(), cell),
            r.rho.map_or("-".into(), cell),
        ]);
    }
    show(&table);
    run.finish()
}

fn run_sweep(
    common: &Common,
    flags: &DataFlags,
    tune: &TuneFlags,
    parameter: &str,
    values: Option<&str>,
) -> anyhow::Result<()> {
    let param = match parameter {
        "lambda" => SweepParameter::Lambda,
        "rho" => SweepParameter::Rho,
        other => bail!("unknown sweep parameter `{other}`, expected lambda or rho"),
    };
    let mut pairs = tune.pairs();
    if let Some(v) = values {
        let key = if param == SweepParameter::Lambda { "sweep_lambdas" } else { "sweep_rhos" };
        pairs.push((key, v.to_string()));
        list_values(v)?;
    }
    let mut run = Run::start("sweep", common, pairs)?;
    let data = load_data(&mut run, flags)?;
    single_aux(&data, "sweep")?;
    let task = task_for(&mut run, &data)?;
    let s = run.settings.clone();
    let grid = if param == SweepParameter::Lambda { &s.sweep_lambdas } else { &s.sweep_rhos };
    let points = eval::sweep(&task, &data.clip, data.aux(), &data.head, &s.train, &s.fusion, param, grid)?;
    let mut table = Table::new(&[param.name(), "val", "test", "test aux"]);
    for p in &points {
        run.record(
            Record::new("sweep")
                .field("parameter", p.parameter.name())
                .field("value", p.value)
                .field("val_acc", p.val_acc)
                .field("test_acc", p.test_acc)
                .field("test_aux_acc", p.test_aux_acc),
        );
        table.row(vec![cell(p.value), pct(p.val_acc), pct(p.test_acc), pct(p.test_aux_acc)]);
    }
    show(&table);
    run.finish()
}
