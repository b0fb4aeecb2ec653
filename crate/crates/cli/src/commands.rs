use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hvp_core::eval::{evaluate, report_json, run_ablations, save_scores, scores_to_text, RetrievalReport, Variant};
use hvp_core::features::{generate_splits, load_dataset, save_dataset, validate_dataset, Dataset, FeatureBundle, Split, SyntheticConfig};
use hvp_core::training::{load_checkpoint, save_checkpoint, train_with, TrainConfig};
use hvp_core::HvpModel;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::{CliError, WithPath};

const MANIFEST: &str = "manifest.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// `data` names a dataset file, or a directory holding `<split>.hvpf`.
fn dataset_path(data: &Path, split: Split) -> PathBuf {
    if data.is_dir() {
        data.join(format!("{}.hvpf", split.as_str()))
    } else {
        data.to_path_buf()
    }
}

fn load_valid(path: &Path) -> Result<Dataset, CliError> {
    let ds = load_dataset(path).at(path)?;
    let report = validate_dataset(&ds);
    if !report.is_valid() {
        let first: Vec<String> = report.violations.iter().take(5).map(|v| v.to_string()).collect();
        return Err(CliError::Invalid(format!(
            "{}: {} validation errors: {}",
            path.display(),
            report.violations.len(),
            first.join("; ")
        )));
    }
    Ok(ds)
}

fn load_model(path: &Path) -> Result<HvpModel, CliError> {
    load_checkpoint(path).at(path)
}

fn refs(ds: &Dataset) -> Vec<&FeatureBundle> {
    ds.bundles.iter().collect()
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replay the config of an earlier gen-data manifest; explicit flags
    /// still override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, alias = "pairs")]
    num_pairs: Option<usize>,
    #[arg(long)]
    concept_bank_size: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    concepts_per_pair: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    max_words: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    modality_gap: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_pairs: Option<usize>,
    #[arg(long)]
    test_pairs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct GenConfig {
    #[serde(flatten)]
    synthetic: SyntheticConfig,
    val_pairs: usize,
    test_pairs: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticConfig::default(),
            val_pairs: 64,
            test_pairs: 64,
        }
    }
}

macro_rules! apply {
    ($target:expr, $args:expr, $($field:ident),+) => {
        $(if let Some(v) = $args.$field.clone() { $target.$field = v; })+
    };
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => RunManifest::load_config(p, "gen-data")?,
        None => GenConfig::default(),
    };
    let s = &mut cfg.synthetic;
    apply!(
        s, a, num_pairs, concept_bank_size, latent_dim, concepts_per_pair, noise_sigma, frames, patches, dim,
        max_words, num_layers, modality_gap, seed
    );
    apply!(cfg, a, val_pairs, test_pairs);

    let splits = generate_splits(&cfg.synthetic, cfg.val_pairs, cfg.test_pairs)?;
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("gen-data", cfg.synthetic.seed, &cfg)?;
    for ds in &splits {
        let path = a.out.join(format!("{}.hvpf", ds.header.split.as_str()));
        save_dataset(ds, &path).at(&path)?;
        manifest.output(&path)?;
        println!("wrote {} ({} pairs)", path.display(), ds.len());
    }
    manifest.write(&a.out.join(MANIFEST))
}

/// Training flags, named after the config fields they set.
#[derive(Args, Clone)]
pub struct TrainFlags {
    /// Comma-separated positions into the dataset's layer list.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    keep_ratios: Option<Vec<f64>>,
    #[arg(long)]
    density_quantile: Option<f64>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    use_mpp: Option<bool>,
    #[arg(long)]
    share_mpp: Option<bool>,
    #[arg(long)]
    per_layer_mlp: Option<bool>,
    #[arg(long)]
    use_sf: Option<bool>,
    #[arg(long)]
    use_sp: Option<bool>,
    #[arg(long)]
    use_wp: Option<bool>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_temperature: Option<f64>,
    #[arg(long)]
    attn_out_std: Option<f64>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        apply!(
            cfg, self, layers, keep_ratios, density_quantile, heads, use_mpp, share_mpp, per_layer_mlp, use_sf,
            use_sp, use_wp, lr, weight_decay, batch_size, epochs, seed, init_temperature, attn_out_std
        );
        if self.mlp_hidden.is_some() {
            cfg.mlp_hidden = self.mlp_hidden;
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory with train.hvpf and val.hvpf.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replay the config of an earlier train manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => RunManifest::load_config(p, "train")?,
        None => TrainConfig::default(),
    };
    a.flags.apply(&mut cfg);
    let train_path = dataset_path(&a.data, Split::Train);
    let val_path = dataset_path(&a.data, Split::Val);
    let train_ds = load_valid(&train_path)?;
    let val = load_valid(&val_path)?;

    let mut rows = String::new();
    let outcome = train_with(&train_ds, &val, &cfg, |r| {
        let line = serde_json::to_string(r).expect("history rows serialize");
        eprintln!("{line}");
        rows.push_str(&line);
        rows.push('\n');
        true
    })?;

    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("train", cfg.seed, &cfg)?;
    manifest.input(&train_path)?;
    manifest.input(&val_path)?;
    let ckpt = a.out.join("model.hvpc");
    save_checkpoint(&outcome.model, &ckpt).at(&ckpt)?;
    let history = a.out.join("history.jsonl");
    write(&history, rows)?;
    manifest.output(&ckpt)?;
    manifest.output(&history)?;
    manifest.write(&a.out.join(MANIFEST))?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: val t2v R@1 {}, v2t R@1 {}",
            last.epoch,
            last.val_t2v_r1.map_or("-".into(), |v| format!("{v:.4}")),
            last.val_v2t_r1.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file, or a directory holding `<split>.hvpf`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "val")]
    split: Split,
    /// Also write the report rows as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn scored(checkpoint: &Path, data: &Path, split: Split) -> Result<hvp_core::alignment::SimilaritySet, CliError> {
    let model = load_model(checkpoint)?;
    let path = dataset_path(data, split);
    let ds = load_valid(&path)?;
    model.config.check_compatible(&ds.header).map_err(|e| {
        CliError::Invalid(format!("checkpoint {} vs dataset {}: {e}", checkpoint.display(), path.display()))
    })?;
    Ok(model.similarities(&refs(&ds), &refs(&ds))?)
}

fn report_table(reports: &[RetrievalReport]) -> String {
    let mut out = format!("{:<4} {:>7} {:>7} {:>7} {:>7} {:>8}\n", "dir", "R@1", "R@5", "R@10", "MdR", "MnR");
    for r in reports {
        out += &format!(
            "{:<4} {:>7.4} {:>7.4} {:>7.4} {:>7.1} {:>8.3}\n",
            r.direction.as_str(),
            r.r1,
            r.r5,
            r.r10,
            r.mdr,
            r.mnr
        );
    }
    out
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let sims = scored(&a.checkpoint, &a.data, a.split)?;
    let reports = evaluate(&sims.total)?;
    print!("{}", report_table(&reports));
    if let Some(out) = &a.out {
        let mut text = String::new();
        for r in &reports {
            text += &report_json("checkpoint", r)?;
            text.push('\n');
        }
        write(out, text)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct AblateArgs {
    /// Directory with train.hvpf and the evaluation split.
    #[arg(long)]
    data: PathBuf,
    /// Split the variants are scored on.
    #[arg(long, default_value = "val")]
    eval_split: Split,
    /// Comma-separated variant names; all variants when omitted.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Directory for ablation.txt, ablation.jsonl and a manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay the config of an earlier ablate manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Serialize, Deserialize)]
struct AblateConfig {
    base: TrainConfig,
    variants: Vec<String>,
    eval_split: Split,
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunManifest::load_config(p, "ablate")?,
        None => AblateConfig {
            base: TrainConfig::default(),
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            eval_split: a.eval_split,
        },
    };
    a.flags.apply(&mut cfg.base);
    if let Some(v) = &a.variants {
        cfg.variants = v.clone();
    }
    let variants = cfg
        .variants
        .iter()
        .map(|s| s.parse::<Variant>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let train_path = dataset_path(&a.data, Split::Train);
    let eval_path = dataset_path(&a.data, cfg.eval_split);
    let train_ds = load_valid(&train_path)?;
    let eval_ds = load_valid(&eval_path)?;
    let table = run_ablations(&train_ds, &eval_ds, &cfg.base, &variants)?;
    let text = table.to_text();
    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        let mut manifest = RunManifest::new("ablate", cfg.base.seed, &cfg)?;
        manifest.input(&train_path)?;
        manifest.input(&eval_path)?;
        let txt = out.join("ablation.txt");
        let jsonl = out.join("ablation.jsonl");
        write(&txt, &text)?;
        write(&jsonl, table.json_lines()?)?;
        manifest.output(&txt)?;
        manifest.output(&jsonl)?;
        manifest.write(&out.join(MANIFEST))?;
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreFormat {
    Binary,
    Text,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "val")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    format: ScoreFormat,
}

pub fn export_scores(a: ExportArgs) -> Result<(), CliError> {
    let sims = scored(&a.checkpoint, &a.data, a.split)?;
    match a.format {
        ScoreFormat::Binary => save_scores(&sims, &a.out).at(&a.out)?,
        ScoreFormat::Text => write(&a.out, scores_to_text(&sims))?,
    }
    println!("wrote {} ({} matrices)", a.out.display(), sims.components.len() + 1);
    Ok(())
}

#[derive(Args)]
pub struct InspectArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
}

pub fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data).at(&a.data)?;
    let header = serde_json::to_string_pretty(&ds.header).map_err(hvp_core::Error::from)?;
    println!("{header}");
    let report = validate_dataset(&ds);
    if report.is_valid() {
        println!("valid: {} pairs", ds.len());
        return Ok(());
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    Err(CliError::Invalid(format!("{} validation errors", report.violations.len())))
}
