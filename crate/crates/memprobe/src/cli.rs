//! The `memprobe` command line.
//!
//! Every subcommand reads a manifest, usually a dump, and writes its reports
//! into `--out`. All inputs are opened and validated before any computation
//! starts. Exit codes: 0 success, 1 computation error, 2 input or
//! configuration error.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand};
use memprobe_core::features::{feature_row, Column, Feature, FeatureSpec, FeatureTable, TensorKind};
use memprobe_core::sae::{self, OptimizerKind, Regime, SaeConfig, TrainReport};
use memprobe_core::stats::{glm_gaussian, group_summary, spearman, zscore_columns, ColumnCorrelation, Standardizer};
use memprobe_core::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{DumpReader, TensorName};
use crate::error::Error;
use crate::manifest::{read_manifest, Manifest};
use crate::model_file::{load_model, save_model, ConfigRecord, ModelFile};
use crate::provenance::{data_lines, Provenance};
use crate::report::{self, CategoryBlock, Delimited};
use crate::table::write_feature_table;

pub const EXIT_COMPUTE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_GLM_LAYER: usize = 10;
pub const DEFAULT_GLM_FEATURES: [Feature; 5] = [
    Feature::ActMean,
    Feature::ActMax,
    Feature::ActMaxAbs,
    Feature::PatchUniformity,
    Feature::AttnEntropy,
];

/// A failed run: the error and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INPUT,
            error: error.into(),
        }
    }

    pub fn compute(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_COMPUTE,
            error: error.into(),
        }
    }
}

/// Missing tensors and bad configuration are input problems; anything else
/// raised by the numerical core is a computation error. File-format and IO
/// errors are input problems.
fn classify(e: Error) -> Failure {
    match &e {
        Error::Core(memprobe_core::Error::MissingTensor { .. } | memprobe_core::Error::InvalidConfig(_)) => {
            Failure::input(e)
        }
        Error::Core(_) => Failure::compute(e),
        _ => Failure::input(e),
    }
}

fn core_failure(e: memprobe_core::Error) -> Failure {
    classify(Error::Core(e))
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "memprobe", version, about = "Relate vision-encoder internals to image memorability")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the per-layer feature table.
    Features(Options),
    /// Spearman correlation of every feature column (and optionally an
    /// external per-image series) with memorability.
    Correlate(Options),
    /// Gaussian GLM of memorability on z-scored features of one layer.
    Glm(Options),
    /// Train the sparse autoencoder on image representations.
    TrainSae(Options),
    /// Per-image reconstruction loss of a trained model.
    Score(Options),
    /// Export bottleneck activations of a trained model.
    Latents(Options),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Features(_) => "features",
            Command::Correlate(_) => "correlate",
            Command::Glm(_) => "glm",
            Command::TrainSae(_) => "train-sae",
            Command::Score(_) => "score",
            Command::Latents(_) => "latents",
        }
    }

    fn options(&self) -> &Options {
        match self {
            Command::Features(o)
            | Command::Correlate(o)
            | Command::Glm(o)
            | Command::TrainSae(o)
            | Command::Score(o)
            | Command::Latents(o) => o,
        }
    }
}

/// Options shared by all subcommands. A JSON config file given with
/// `--config` may set any of them under the same (kebab-case) names;
/// flags win over the file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Options {
    /// JSON file with option values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Activation dump (.memv).
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Manifest CSV: image_id,memorability,category,split.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every random draw (default 42).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Inclusive layer range `A..B` (or a single layer) for feature columns.
    #[arg(long)]
    pub layers: Option<String>,
    /// Comma-separated feature names (default: all).
    #[arg(long)]
    pub features: Option<String>,
    /// CSV `image_id,<name>` of an extra per-image series to correlate.
    #[arg(long)]
    pub external_series: Option<PathBuf>,
    /// File of image ids (one per line) to drop before any analysis.
    #[arg(long)]
    pub exclude_ids: Option<PathBuf>,
    /// Layer for the GLM (default 10, or the last layer if smaller).
    #[arg(long)]
    pub glm_layer: Option<usize>,
    /// Comma-separated GLM predictors (default
    /// act_mean,act_max,act_maxabs,patch_uniformity,attn_entropy).
    #[arg(long)]
    pub glm_features: Option<String>,
    /// Autoencoder regime: split (80/20) or single (whole set, batch 1).
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of seeds to train, starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub sparsity_weight: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Autoencoder input: `auto`, `pooled` or `cls@L<k>`.
    #[arg(long)]
    pub representation: Option<String>,
    /// Trained model file (.memsae) for score and latents.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($flags:ident, $file:ident; $($f:ident),*) => {
        Options {
            config: $flags.config.clone(),
            $($f: $flags.$f.clone().or($file.$f),)*
        }
    };
}

impl Options {
    /// Fills unset flags from the config file, if any.
    pub fn resolve(&self) -> Outcome<Options> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::input)?;
        let file: Options = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::input)?;
        let flags = self;
        Ok(merge_fields!(flags, file; dump, manifest, out, seed, layers, features, external_series,
            exclude_ids, glm_layer, glm_features, regime, epochs, seeds, hidden_dim, batch_size,
            learning_rate, sparsity_weight, optimizer, representation, model))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

/// Parses `A..B`, `A..=B` (both inclusive) or a single layer `A`.
pub fn parse_layer_range(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let bad = || format!("bad layer range `{s}` (expected A..B)");
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let range = match s.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.strip_prefix('=').unwrap_or(b))?,
        None => {
            let k = num(s)?;
            k..=k
        }
    };
    if range.is_empty() {
        return Err(bad());
    }
    Ok(range)
}

fn parse_features(s: &str) -> Outcome<Vec<Feature>> {
    s.split(',')
        .map(|f| f.trim().parse::<Feature>().map_err(core_failure))
        .collect()
}

/// Which tensor feeds the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Pooled,
    Cls(usize),
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Representation::Pooled => f.write_str("pooled"),
            Representation::Cls(k) => write!(f, "cls@L{k}"),
        }
    }
}

impl FromStr for Representation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "pooled" {
            return Ok(Representation::Pooled);
        }
        s.strip_prefix("cls@L")
            .and_then(|k| k.parse().ok())
            .map(Representation::Cls)
            .ok_or_else(|| format!("bad representation `{s}` (expected pooled or cls@L<k>)"))
    }
}

impl Representation {
    /// `auto`: the pooled output for encoders without a CLS token when the
    /// dump has it, otherwise the last layer's CLS vector.
    fn resolve(spec: Option<&str>, dump: &DumpReader, ids: &[String]) -> Outcome<Self> {
        let rep = match spec {
            None | Some("auto") => {
                let pooled = ids.first().map_or(false, |id| dump.contains(&TensorName::pooled(id)));
                if !dump.meta().has_cls && pooled {
                    Representation::Pooled
                } else {
                    Representation::Cls(dump.meta().num_layers)
                }
            }
            Some(s) => s.parse().map_err(|e: String| Failure::input(anyhow!(e)))?,
        };
        if let Representation::Cls(k) = rep {
            if k > dump.meta().num_layers {
                return Err(Failure::input(anyhow!(
                    "representation {rep}: the dump has layers 0..={}",
                    dump.meta().num_layers
                )));
            }
        }
        Ok(rep)
    }

    fn tensor_name(self, image_id: &str) -> String {
        match self {
            Representation::Pooled => TensorName::pooled(image_id),
            Representation::Cls(k) => TensorName::layer(image_id, k, TensorKind::Cls),
        }
    }

    /// One row per image, in `ids` order.
    fn matrix(self, dump: &DumpReader, ids: &[String]) -> Outcome<Matrix> {
        let rows: Vec<Vec<f32>> = ids
            .par_iter()
            .map(|id| dump.tensor(&self.tensor_name(id)).map(|t| t.data))
            .collect::<crate::Result<_>>()
            .map_err(classify)?;
        let d = rows.first().map_or(0, Vec::len);
        let data = rows.into_iter().flatten().map(f64::from).collect();
        Matrix::from_vec(ids.len(), d, data).map_err(core_failure)
    }
}

/// Inputs common to every subcommand, loaded and checked up front.
struct Inputs {
    manifest: Manifest,
    dump: Option<DumpReader>,
    out: PathBuf,
    provenance: Provenance,
}

impl Inputs {
    fn dump(&self) -> &DumpReader {
        self.dump.as_ref().expect("dump is required for this subcommand")
    }
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Outcome<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Failure::input(anyhow!("missing required option --{flag}")))
}

fn existing<'a>(path: &'a Path, what: &str) -> Outcome<&'a Path> {
    if !path.is_file() {
        return Err(Failure::input(anyhow!("{what} not found: {}", path.display())));
    }
    Ok(path)
}

fn read_exclusions(path: &Path, manifest: &Manifest) -> Outcome<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| classify(Error::io(path, e)))?;
    let mut ids = HashSet::new();
    for (line, l) in data_lines(&text) {
        let id = l.trim();
        if line == 1 && id == "image_id" {
            continue;
        }
        if manifest.position(id).is_none() {
            return Err(Failure::input(anyhow!(
                "{}: line {line}: image `{id}` is not in the manifest",
                path.display()
            )));
        }
        ids.insert(id.to_string());
    }
    Ok(ids)
}

fn load_inputs(command: &str, opts: &Options, needs_dump: bool) -> Outcome<Inputs> {
    let manifest_path = existing(required(&opts.manifest, "manifest")?, "manifest")?;
    let out = required(&opts.out, "out")?.to_path_buf();
    let dump_path = match (&opts.dump, needs_dump) {
        (Some(p), _) => Some(existing(p, "dump")?),
        (None, true) => return Err(Failure::input(anyhow!("missing required option --dump"))),
        (None, false) => None,
    };
    for (p, what) in [(&opts.external_series, "external series"), (&opts.exclude_ids, "exclusion list"), (&opts.model, "model")] {
        if let Some(p) = p {
            existing(p, what)?;
        }
    }

    let mut manifest = read_manifest(manifest_path).map_err(classify)?;
    if let Some(p) = &opts.exclude_ids {
        let excluded = read_exclusions(p, &manifest)?;
        manifest = manifest.without(&excluded);
    }
    if manifest.is_empty() {
        return Err(Failure::input(anyhow!("no images left to analyse")));
    }
    let dump = dump_path.map(DumpReader::open).transpose().map_err(classify)?;
    if let Some(dump) = &dump {
        let known: HashSet<&str> = dump.image_ids().iter().map(String::as_str).collect();
        if let Some(r) = manifest.records().iter().find(|r| !known.contains(r.image_id.as_str())) {
            return Err(Failure::input(anyhow!(
                "image `{}` from the manifest is not in the dump {}",
                r.image_id,
                dump_path.unwrap().display()
            )));
        }
    }
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(Failure::input)?;
    // where the reports go is not part of the configuration
    let hashed = Options {
        out: None,
        ..opts.clone()
    };
    Ok(Inputs {
        manifest,
        dump,
        out,
        provenance: Provenance::new(&(command, &hashed), opts.seed()),
    })
}

/// Builds the feature table with one parallel task per image; rows are
/// assembled in manifest order, so the result does not depend on scheduling.
pub fn parallel_feature_table(dump: &DumpReader, ids: &[String], columns: Vec<Column>) -> crate::Result<FeatureTable> {
    let hidden_dim = dump.meta().hidden_dim;
    let rows = ids
        .par_iter()
        .map(|id| feature_row(dump, id, hidden_dim, &columns))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(FeatureTable::from_rows(ids.to_vec(), columns, rows)?)
}

fn feature_columns(opts: &Options, dump: &DumpReader) -> Outcome<Vec<Column>> {
    let meta = dump.meta();
    let mut spec = FeatureSpec::all(meta.num_layers, meta.hidden_dim);
    if let Some(f) = &opts.features {
        spec.features = parse_features(f)?;
    }
    if let Some(l) = &opts.layers {
        let range = parse_layer_range(l).map_err(|e| Failure::input(anyhow!(e)))?;
        if *range.end() > meta.num_layers {
            return Err(Failure::input(anyhow!(
                "layer range {l} exceeds the dump's layers 0..={}",
                meta.num_layers
            )));
        }
        spec = spec.with_layers(range);
    }
    let columns = spec.columns();
    if columns.is_empty() {
        return Err(Failure::input(anyhow!("the selected features and layers give no columns")));
    }
    Ok(columns)
}

fn build_table(inputs: &Inputs, opts: &Options) -> Outcome<FeatureTable> {
    let dump = inputs.dump();
    let columns = feature_columns(opts, dump)?;
    parallel_feature_table(dump, &inputs.manifest.ids(), columns).map_err(classify)
}

pub fn run(cli: Cli) -> Outcome {
    let name = cli.command.name();
    let opts = cli.command.options().resolve()?;
    match cli.command {
        Command::Features(_) => features(name, &opts),
        Command::Correlate(_) => correlate(name, &opts),
        Command::Glm(_) => glm(name, &opts),
        Command::TrainSae(_) => train_sae(name, &opts),
        Command::Score(_) => score(name, &opts),
        Command::Latents(_) => latents(name, &opts),
    }
}

fn features(name: &str, opts: &Options) -> Outcome {
    let inputs = load_inputs(name, opts, true)?;
    let table = build_table(&inputs, opts)?;
    let path = inputs.out.join("features.csv");
    write_feature_table(&path, &table, Some(&inputs.provenance)).map_err(classify)?;

    let mut counts: Vec<(Feature, usize)> = Vec::new();
    for c in table.columns() {
        match counts.last_mut() {
            Some((f, n)) if *f == c.feature => *n += 1,
            _ => counts.push((c.feature, 1)),
        }
    }
    for (f, n) in counts {
        println!("{f}: {n} columns");
    }
    println!(
        "wrote {} ({} images x {} columns)",
        path.display(),
        table.num_rows(),
        table.num_cols()
    );
    Ok(())
}

/// Reads `image_id,<name>` and returns the name and the values in manifest
/// order.
fn read_external_series(path: &Path, full: &Manifest, manifest: &Manifest) -> Outcome<(String, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| classify(Error::io(path, e)))?;
    let bad = |line: usize, msg: String| Failure::input(Error::parse(path, line, msg));
    let mut lines = data_lines(&text);
    let (hline, header) = lines.next().ok_or_else(|| bad(1, "empty series file".into()))?;
    let series_name = match header.split(',').collect::<Vec<_>>()[..] {
        ["image_id", name] => name.to_string(),
        _ => return Err(bad(hline, format!("expected header `image_id,<name>`, found `{header}`"))),
    };
    let mut values: HashMap<String, f64> = HashMap::new();
    for (line, l) in lines {
        let (id, v) = l.split_once(',').ok_or_else(|| bad(line, "expected 2 fields".into()))?;
        if full.position(id).is_none() {
            return Err(bad(line, format!("image `{id}` is not in the manifest")));
        }
        let v: f64 = v.trim().parse().map_err(|_| bad(line, format!("`{v}` is not a number")))?;
        if !v.is_finite() {
            return Err(bad(line, format!("`{v}` is not finite")));
        }
        if values.insert(id.to_string(), v).is_some() {
            return Err(bad(line, format!("duplicate image `{id}`")));
        }
    }
    let ordered = manifest
        .records()
        .iter()
        .map(|r| {
            values.get(&r.image_id).copied().ok_or_else(|| {
                Failure::input(anyhow!("{}: no value for image `{}`", path.display(), r.image_id))
            })
        })
        .collect::<Outcome<Vec<f64>>>()?;
    Ok((series_name, ordered))
}

fn correlate(name: &str, opts: &Options) -> Outcome {
    if opts.dump.is_none() && opts.external_series.is_none() {
        return Err(Failure::input(anyhow!("correlate needs --dump, --external-series or both")));
    }
    let inputs = load_inputs(name, opts, false)?;
    let prov = &inputs.provenance;
    let full = match &opts.external_series {
        Some(_) => Some(read_manifest(opts.manifest.as_ref().unwrap()).map_err(classify)?),
        None => None,
    };
    let external = match (&opts.external_series, &full) {
        (Some(p), Some(full)) => Some(read_external_series(p, full, &inputs.manifest)?),
        _ => None,
    };
    let memorability = inputs.manifest.memorability();
    let categories = inputs.manifest.categories();

    let mem_groups = group_summary(&memorability, &categories).map_err(core_failure)?;
    let mut blocks = vec![CategoryBlock {
        variable: "memorability".into(),
        groups: &mem_groups,
    }];

    let mut column_groups = Vec::new();
    let mut table = None;
    if inputs.dump.is_some() {
        let t = build_table(&inputs, opts)?;
        let rows: Vec<ColumnCorrelation> = (0..t.num_cols())
            .into_par_iter()
            .map(|c| ColumnCorrelation {
                column: t.columns()[c],
                result: spearman(&t.column_values(c), &memorability),
            })
            .collect();
        report::write_text(&inputs.out.join("correlations.csv"), &report::correlations_csv(&rows, prov))
            .map_err(classify)?;
        report::write_text(&inputs.out.join("layer_series.csv"), &report::layer_series_csv(&rows, prov))
            .map_err(classify)?;
        report::write_json(
            &inputs.out.join("correlations.json"),
            &report::correlations_json(&rows, "memorability", prov),
        )
        .map_err(classify)?;

        for c in 0..t.num_cols() {
            let groups = group_summary(&t.column_values(c), &categories).map_err(core_failure)?;
            column_groups.push((t.columns()[c].to_string(), groups));
        }
        print_strongest(&rows);
        table = Some(t);
    }
    blocks.extend(column_groups.iter().map(|(variable, groups)| CategoryBlock {
        variable: variable.clone(),
        groups,
    }));
    report::write_text(&inputs.out.join("categories.csv"), &report::categories_csv(&blocks, prov))
        .map_err(classify)?;

    if let Some((series, values)) = external {
        let r = spearman(&values, &memorability).map_err(core_failure)?;
        report::write_text(&inputs.out.join("external.csv"), &report::external_csv(&series, &r, prov))
            .map_err(classify)?;
        println!("{series}: rho = {:.4}, p = {:.3e}, n = {}", r.coef, r.p_value, r.n);
    }
    if let Some(t) = table {
        println!(
            "correlated {} columns over {} images into {}",
            t.num_cols(),
            t.num_rows(),
            inputs.out.display()
        );
    }
    Ok(())
}

fn print_strongest(rows: &[ColumnCorrelation]) {
    let mut best: Vec<(Feature, usize, f64)> = Vec::new();
    for r in rows {
        let Ok(c) = r.result else { continue };
        match best.iter_mut().find(|(f, ..)| *f == r.column.feature) {
            Some(b) if c.coef.abs() > b.2.abs() => *b = (r.column.feature, r.column.layer, c.coef),
            Some(_) => {}
            None => best.push((r.column.feature, r.column.layer, c.coef)),
        }
    }
    for (f, layer, coef) in best {
        println!("{f}: strongest at layer {layer} (rho = {coef:.4})");
    }
}

fn glm(name: &str, opts: &Options) -> Outcome {
    let inputs = load_inputs(name, opts, true)?;
    let dump = inputs.dump();
    let num_layers = dump.meta().num_layers;
    let layer = opts.glm_layer.unwrap_or(DEFAULT_GLM_LAYER.min(num_layers));
    let features = match &opts.glm_features {
        Some(s) => parse_features(s)?,
        None => DEFAULT_GLM_FEATURES.to_vec(),
    };
    let columns: Vec<Column> = features.iter().map(|&f| Column::new(f, layer)).collect();
    if let Some(c) = columns.iter().find(|c| !c.feature.layers(num_layers).contains(&layer)) {
        return Err(Failure::input(anyhow!(
            "{} is not defined at layer {layer}",
            c.feature
        )));
    }
    let table = parallel_feature_table(dump, &inputs.manifest.ids(), columns).map_err(classify)?;
    let names: Vec<String> = features.iter().map(|f| f.name().to_string()).collect();
    let x = Matrix::from_vec(table.num_rows(), table.num_cols(), table.values().to_vec()).map_err(core_failure)?;
    let (z, _) = zscore_columns(&x, &names).map_err(core_failure)?;
    let fit = glm_gaussian(&inputs.manifest.memorability(), &z, &names)
        .map_err(|e| Failure::compute(anyhow!("GLM at layer {layer}: {e}")))?;

    let text = report::glm_table(&fit, layer, &inputs.provenance);
    report::write_text(&inputs.out.join("glm.csv"), &report::glm_csv(&fit, &inputs.provenance))
        .map_err(classify)?;
    report::write_text(&inputs.out.join("glm.txt"), &text).map_err(classify)?;
    print!("{}", text.split_once('\n').map_or("", |(_, body)| body));
    Ok(())
}

fn sae_config(opts: &Options, input_dim: usize) -> Outcome<SaeConfig> {
    let regime: Regime = opts.regime.as_deref().unwrap_or("split").parse().map_err(core_failure)?;
    let mut c = SaeConfig::for_regime(regime, input_dim);
    c.seed = opts.seed();
    if let Some(v) = opts.hidden_dim {
        c.hidden_dim = v;
    }
    if let Some(v) = opts.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = opts.epochs {
        c.epochs = v;
    }
    if let Some(v) = opts.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = opts.sparsity_weight {
        c.sparsity_weight = v;
    }
    match opts.optimizer.as_deref() {
        None | Some("adam") => c.optimizer = OptimizerKind::ADAM,
        Some("sgd") => c.optimizer = OptimizerKind::Sgd,
        Some(other) => return Err(Failure::input(anyhow!("unknown optimizer `{other}` (adam or sgd)"))),
    }
    c.validate().map_err(core_failure)?;
    Ok(c)
}

fn train_sae(name: &str, opts: &Options) -> Outcome {
    let inputs = load_inputs(name, opts, true)?;
    let dump = inputs.dump();
    let ids = inputs.manifest.ids();
    let rep = Representation::resolve(opts.representation.as_deref(), dump, &ids)?;
    let raw = rep.matrix(dump, &ids)?;
    let base = sae_config(opts, raw.cols())?;
    let seeds = opts.seeds.unwrap_or(1);
    if seeds == 0 {
        return Err(Failure::input(anyhow!("--seeds must be at least 1")));
    }

    // statistics over every representation, persisted with the model
    let names: Vec<String> = (0..raw.cols()).map(|i| format!("{rep} dimension {i}")).collect();
    let normalization = Standardizer::fit(&raw, &names).map_err(core_failure)?;
    let x = normalization.apply(&raw).map_err(core_failure)?;
    let memorability = inputs.manifest.memorability();

    let runs: Vec<(SaeConfig, sae::SaeModel, TrainReport)> = (0..seeds as u64)
        .into_par_iter()
        .map(|k| {
            let config = SaeConfig {
                seed: base.seed + k,
                ..base.clone()
            };
            sae::train(&config, &x, &memorability).map(|(m, r)| (config, m, r))
        })
        .collect::<memprobe_core::Result<_>>()
        .map_err(core_failure)?;

    for (i, (config, model, _)) in runs.iter().enumerate() {
        let file = ModelFile {
            config: config.clone(),
            normalization: normalization.clone(),
            representation: rep.to_string(),
            model: model.clone(),
        };
        let prov = Provenance {
            seed: config.seed,
            ..inputs.provenance.clone()
        };
        if i == 0 {
            save_model(&inputs.out.join("model.memsae"), &file, Some(&prov)).map_err(classify)?;
        }
        if seeds > 1 {
            let path = inputs.out.join(format!("model_seed{}.memsae", config.seed));
            save_model(&path, &file, Some(&prov)).map_err(classify)?;
        }
    }

    let reports: Vec<TrainReport> = runs.iter().map(|(.., r)| r.clone()).collect();
    let prov = &inputs.provenance;
    report::write_json(
        &inputs.out.join("train_report.json"),
        &report::train_report_json(&reports, &ConfigRecord::from(&base), &rep.to_string(), prov),
    )
    .map_err(classify)?;
    let series = report::epoch_series_csv(&reports, prov);
    report::write_text(&inputs.out.join("epoch_series.csv"), &series).map_err(classify)?;

    let mut losses = Delimited::new(prov, report::LOSSES_HEADER);
    for r in &reports {
        let eval: HashSet<usize> = r.eval_indices.iter().copied().collect();
        for (i, rec) in inputs.manifest.records().iter().enumerate() {
            let set = match (r.regime, eval.contains(&i)) {
                (Regime::Single, _) => "all",
                (Regime::Split, true) => "val",
                (Regime::Split, false) => "train",
            };
            losses.row([
                r.seed.to_string(),
                rec.image_id.clone(),
                set.to_string(),
                r.final_losses[i].to_string(),
                rec.memorability.to_string(),
                rec.category.to_string(),
            ]);
        }
    }
    losses.write(&inputs.out.join("losses.csv")).map_err(classify)?;

    for r in &reports {
        for w in &r.warnings {
            eprintln!("warning (seed {}): {w}", r.seed);
        }
    }
    println!(
        "trained {seeds} model(s) on {rep} ({} images, {} -> {}), regime {}",
        x.rows(),
        base.input_dim,
        base.hidden_dim,
        base.regime.name()
    );
    print!("{}", series.split_once('\n').map_or("", |(_, body)| body));
    Ok(())
}

/// Loads the model and the matching standardised representations.
fn model_inputs(name: &str, opts: &Options) -> Outcome<(Inputs, ModelFile, Representation, Matrix)> {
    let model_path = required(&opts.model, "model")?.to_path_buf();
    let inputs = load_inputs(name, opts, true)?;
    let file = load_model(&model_path).map_err(classify)?;
    let ids = inputs.manifest.ids();
    let spec = opts.representation.as_deref().unwrap_or(&file.representation);
    let rep = Representation::resolve(Some(spec), inputs.dump(), &ids)?;
    let raw = rep.matrix(inputs.dump(), &ids)?;
    if raw.cols() != file.model.input_dim() {
        return Err(Failure::input(anyhow!(
            "dimension mismatch: model {} expects {} inputs but representation {rep} has {}",
            model_path.display(),
            file.model.input_dim(),
            raw.cols()
        )));
    }
    let x = file.normalization.apply(&raw).map_err(core_failure)?;
    Ok((inputs, file, rep, x))
}

fn score(name: &str, opts: &Options) -> Outcome {
    let (inputs, file, rep, x) = model_inputs(name, opts)?;
    let losses = sae::score(&file.model, &x).map_err(core_failure)?;
    let prov = &inputs.provenance;
    let mut out = Delimited::new(prov, report::SCORES_HEADER);
    for (rec, l) in inputs.manifest.records().iter().zip(&losses) {
        out.row([
            rec.image_id.clone(),
            l.to_string(),
            rec.memorability.to_string(),
            rec.category.to_string(),
        ]);
    }
    out.write(&inputs.out.join("scores.csv")).map_err(classify)?;
    let r = spearman(&losses, &inputs.manifest.memorability()).map_err(core_failure)?;
    report::write_text(
        &inputs.out.join("score_correlation.csv"),
        &report::external_csv("recon_loss", &r, prov),
    )
    .map_err(classify)?;
    println!(
        "scored {} images on {rep}: rho(loss, memorability) = {:.4}, p = {:.3e}",
        r.n, r.coef, r.p_value
    );
    Ok(())
}

fn latents(name: &str, opts: &Options) -> Outcome {
    let (inputs, file, _, x) = model_inputs(name, opts)?;
    let stats = sae::latent_stats(&file.model, &x).map_err(core_failure)?;
    let mut out = Delimited::new(&inputs.provenance, &report::latents_header(file.model.hidden_dim()));
    for (i, rec) in inputs.manifest.records().iter().enumerate() {
        let mut row = vec![rec.image_id.clone()];
        row.extend(stats.latents.row(i).iter().map(f64::to_string));
        row.push(stats.mean_abs[i].to_string());
        row.push(rec.memorability.to_string());
        row.push(rec.category.to_string());
        out.row(row);
    }
    out.write(&inputs.out.join("latents.csv")).map_err(classify)?;
    println!("wrote latents for {} images", x.rows());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_ranges() {
        assert_eq!(parse_layer_range("1..6"), Ok(1..=6));
        assert_eq!(parse_layer_range("1..=6"), Ok(1..=6));
        assert_eq!(parse_layer_range("3"), Ok(3..=3));
        assert!(parse_layer_range("6..1").is_err());
        assert!(parse_layer_range("a..b").is_err());
    }

    #[test]
    fn representation_names() {
        assert_eq!("pooled".parse(), Ok(Representation::Pooled));
        assert_eq!("cls@L12".parse(), Ok(Representation::Cls(12)));
        assert_eq!(Representation::Cls(3).to_string(), "cls@L3");
        assert!("cls12".parse::<Representation>().is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 7, "epochs": 3, "layers": "1..2"}"#).unwrap();
        let flags = Options {
            config: Some(path),
            seed: Some(9),
            ..Options::default()
        };
        let o = flags.resolve().unwrap();
        assert_eq!((o.seed, o.epochs, o.layers.as_deref()), (Some(9), Some(3), Some("1..2")));
    }

    #[test]
    fn unknown_config_key_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sed": 7}"#).unwrap();
        let e = Options {
            config: Some(path),
            ..Options::default()
        }
        .resolve()
        .unwrap_err();
        assert_eq!(e.code, EXIT_INPUT);
    }
}
