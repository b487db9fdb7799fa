use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use iscs_core::codec::{self, ChannelOrder, EncodeOptions, FitParams, ToyCodecModel};
use iscs_core::discovery::{flag_bias_dominated, DiscoveryParams, SimilarityMode};
use iscs_core::evaluation::{
    ablation_csv, ablation_sweep, correlation_report, plot_data_tsv, psnr,
};
use iscs_core::grouping::{
    build_naive_plan, build_plan, IscsManifest, ManifestSource, OrderingStrategy,
};
use iscs_core::importance::ChannelScores;
use iscs_core::scheduler::{
    build_dag_flat, build_dag_grouped, compare_strategies, grouped_task_count, simulate,
    strategies_csv, trace_csv, CostModel,
};
use iscs_core::synth::{one_over_f_image, Planted};
use iscs_core::tensor_io::{
    extract_kernel_set, insert_kernel_set, read_image, read_tensor_file, write_image,
    write_tensor_file, ConvKernelSet, Image, TensorFile,
};

use crate::config::{required, resolve, write_sidecar};
use crate::error::CliError;
use crate::write_file;

fn input<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Resolves an exact tensor name or a glob that must match exactly one name.
fn resolve_tensor_name(tf: &TensorFile, pattern: &str) -> Result<String, CliError> {
    if !pattern.contains(['*', '?', '[']) {
        return Ok(pattern.to_string());
    }
    let pat = glob::Pattern::new(pattern)
        .map_err(|e| CliError::Input(format!("bad tensor pattern {pattern:?}: {e}")))?;
    let hits: Vec<&str> = tf.names().filter(|n| pat.matches(n)).collect();
    match hits.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(CliError::Input(format!("no tensor matches {pattern:?}"))),
        many => Err(CliError::Input(format!(
            "pattern {pattern:?} matches {} tensors: {}",
            many.len(),
            many.join(", ")
        ))),
    }
}

struct LoadedKernels {
    kernels: ConvKernelSet,
    tensor: String,
    bias: Option<String>,
}

fn load_kernels(
    weights: &Path,
    tensor: &str,
    bias: Option<&str>,
) -> Result<LoadedKernels, CliError> {
    let tf = read_tensor_file(weights)?;
    if tf.is_empty() {
        return Err(CliError::Input(format!(
            "{}: container holds no tensors",
            weights.display()
        )));
    }
    let tensor = resolve_tensor_name(&tf, tensor)?;
    let bias = bias.map(|b| resolve_tensor_name(&tf, b)).transpose()?;
    let kernels = extract_kernel_set(&tf, &tensor, bias.as_deref())?;
    Ok(LoadedKernels {
        kernels,
        tensor,
        bias,
    })
}

fn load_model(path: &Path) -> Result<ToyCodecModel, CliError> {
    Ok(ToyCodecModel::from_tensor_file(&read_tensor_file(path)?)?)
}

fn load_manifest(path: &Path) -> Result<IscsManifest, CliError> {
    Ok(IscsManifest::read(path)?)
}

/// PGM/PPM files of a directory in file-name order.
fn load_images(dir: &Path) -> Result<Vec<Image>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(input(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Input(format!(
            "no PGM/PPM images in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| Ok(read_image(p)?)).collect()
}

fn parse_similarity(s: &str) -> Result<SimilarityMode, CliError> {
    match s {
        "raw" => Ok(SimilarityMode::Raw),
        "abs" | "absolute" => Ok(SimilarityMode::Absolute),
        _ => Err(CliError::Input(format!(
            "similarity must be raw or abs, got {s:?}"
        ))),
    }
}

fn parse_on_off(s: &str) -> Result<bool, CliError> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(CliError::Input(format!("expected on or off, got {s:?}"))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.6}"))
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Tensor container with the encoder weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Weight tensor name (glob allowed if it matches exactly one tensor).
    #[arg(long)]
    tensor: Option<String>,
    #[arg(long)]
    bias: Option<String>,
    /// Output CSV `channel,variance,bias`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional square similarity matrix CSV.
    #[arg(long)]
    sim_out: Option<PathBuf>,
}

pub fn analyze(flags: AnalyzeOpts) -> Result<(), CliError> {
    let o = resolve(&flags, flags.config.as_deref())?;
    let weights = required(&o.weights, "weights")?;
    let tensor = required(&o.tensor, "tensor")?;
    let out = required(&o.out, "out")?;
    let k = load_kernels(&weights, &tensor, o.bias.as_deref())?;
    let scores = ChannelScores::compute(&k.kernels);
    let mut csv = String::from("channel,variance,bias\n");
    for c in 0..scores.channels() {
        writeln!(csv, "{c},{},{}", scores.variance[c], scores.bias_mag[c]).unwrap();
    }
    write_file(&out, csv.as_bytes())?;
    write_sidecar(&out, &o)?;
    if let Some(sim_out) = &o.sim_out {
        let n = scores.channels();
        let mut s = String::new();
        for a in 0..n {
            let row: Vec<String> = scores
                .similarity
                .row(a)
                .iter()
                .map(f64::to_string)
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        write_file(sim_out, s.as_bytes())?;
    }
    println!("analyzed {} channels of {}", scores.channels(), k.tensor);
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct DiscoverOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    tensor: Option<String>,
    #[arg(long)]
    bias: Option<String>,
    /// Channels per group, SC included.
    #[arg(long)]
    group_size: Option<usize>,
    /// Slices per group; must divide the group size.
    #[arg(long)]
    slice_count: Option<usize>,
    /// Defaults to floor((C - bias channels) / group size).
    #[arg(long)]
    num_groups: Option<usize>,
    /// Robust z-score cutoff for bias-dominated channels [default: 3.5].
    #[arg(long)]
    bias_z: Option<f64>,
    /// raw | abs [default: raw].
    #[arg(long)]
    similarity: Option<String>,
    /// kn_i | corr_ascending | corr_descending | tsp_greedy [default: kn_i].
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn discover(flags: DiscoverOpts) -> Result<(), CliError> {
    let mut o = resolve(&flags, flags.config.as_deref())?;
    o.bias_z.get_or_insert(DiscoveryParams::DEFAULT_BIAS_Z);
    o.similarity.get_or_insert_with(|| "raw".into());
    o.strategy
        .get_or_insert_with(|| OrderingStrategy::KnI.to_string());
    let weights = required(&o.weights, "weights")?;
    let tensor = required(&o.tensor, "tensor")?;
    let out = required(&o.out, "out")?;
    let group_size = required(&o.group_size, "group-size")?;
    let slice_count = required(&o.slice_count, "slice-count")?;
    let strategy: OrderingStrategy = o.strategy.as_deref().unwrap().parse()?;
    let params = DiscoveryParams {
        group_size,
        num_groups: o.num_groups,
        bias_z_threshold: o.bias_z.unwrap(),
        similarity_mode: parse_similarity(o.similarity.as_deref().unwrap())?,
    };
    let k = load_kernels(&weights, &tensor, o.bias.as_deref())?;
    let source = ManifestSource {
        file: weights.display().to_string(),
        tensor: k.tensor.clone(),
        bias_tensor: k.bias.clone(),
        shape: k.kernels.shape(),
    };
    let (mut manifest, scores) =
        IscsManifest::analyze(&k.kernels, source, params.clone(), slice_count, strategy)?;
    manifest
        .structure
        .validate(k.kernels.c_out(), Some((&scores, params.similarity_mode)))
        .map_err(|e| CliError::Invariant(e.to_string()))?;
    manifest.run_config = Some(serde_json::to_value(&o).expect("config serializes"));
    write_file(&out, &manifest.to_json_bytes())?;
    println!(
        "{} groups, {} bias-dominated channels {:?}, {} residual",
        manifest.structure.groups.len(),
        manifest.structure.bias_channels.len(),
        manifest.structure.bias_channels,
        manifest.structure.residual.len()
    );
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct FitOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Directory of grayscale PGM training images.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output model container.
    #[arg(long)]
    out: Option<PathBuf>,
    /// [default: 8]
    #[arg(long)]
    patch_size: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    channels: Option<usize>,
    /// Default quantizer step [default: 0.02].
    #[arg(long)]
    delta: Option<f64>,
    /// Bias of the planted constant channel [default: 4.0].
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn fit(flags: FitOpts) -> Result<(), CliError> {
    let mut o = resolve(&flags, flags.config.as_deref())?;
    let d = FitParams::default();
    let params = FitParams {
        patch_size: *o.patch_size.get_or_insert(d.patch_size),
        channels: *o.channels.get_or_insert(d.channels),
        delta: *o.delta.get_or_insert(d.delta),
        beta: *o.beta.get_or_insert(d.beta),
        seed: *o.seed.get_or_insert(d.seed),
    };
    let images = load_images(&required(&o.images, "images")?)?;
    let out = required(&o.out, "out")?;
    let model = ToyCodecModel::fit(&images, &params)?;
    model
        .validate()
        .map_err(|e| CliError::Invariant(e.to_string()))?;
    write_tensor_file(&out, &model.to_tensor_file())?;
    write_sidecar(&out, &o)?;
    println!(
        "fitted {} channels on {} images",
        model.channels(),
        images.len()
    );
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct EncodeOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Grayscale PGM image.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quantizer step [default: the model's].
    #[arg(long)]
    delta: Option<f64>,
    /// on | off: send bias-dominated channels as one scalar [default: off].
    #[arg(long)]
    scalar_path: Option<String>,
    /// Manifest whose permutation sets the stream channel order.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn encode(flags: EncodeOpts) -> Result<(), CliError> {
    let mut o = resolve(&flags, flags.config.as_deref())?;
    let model = load_model(&required(&o.model, "model")?)?;
    o.delta.get_or_insert(model.delta());
    o.scalar_path.get_or_insert_with(|| "off".into());
    let scalar = parse_on_off(o.scalar_path.as_deref().unwrap())?;
    let img = read_image(required(&o.input, "input")?)?;
    let out = required(&o.out, "out")?;
    let manifest = o.manifest.as_deref().map(load_manifest).transpose()?;
    if let Some(m) = &manifest {
        if m.channel_count() != model.channels() {
            return Err(CliError::Input(format!(
                "manifest covers {} channels, model has {}",
                m.channel_count(),
                model.channels()
            )));
        }
    }
    let scalar_channels = match (scalar, &manifest) {
        (false, _) => Vec::new(),
        (true, Some(m)) => m.structure.bias_channels.clone(),
        (true, None) => flag_bias_dominated(
            &model.bias().iter().map(|b| b.abs()).collect::<Vec<_>>(),
            DiscoveryParams::DEFAULT_BIAS_Z,
        ),
    };
    let opts = EncodeOptions {
        delta: o.delta,
        scalar_channels,
        order: manifest.as_ref().map(ChannelOrder::from_manifest),
    };
    let bytes = codec::encode_image(&model, &img, &opts)?;
    write_file(&out, &bytes)?;
    write_sidecar(&out, &o)?;
    let bpp = bytes.len() as f64 * 8.0 / img.pixel_count() as f64;
    println!("{} bytes, {bpp:.4} bpp", bytes.len());
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct DecodeOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output PGM.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Required when the stream was encoded with a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Original image; PSNR against it is printed.
    #[arg(long)]
    reference: Option<PathBuf>,
}

pub fn decode(flags: DecodeOpts) -> Result<(), CliError> {
    let o = resolve(&flags, flags.config.as_deref())?;
    let model = load_model(&required(&o.model, "model")?)?;
    let input_path = required(&o.input, "input")?;
    let bytes = fs::read(&input_path).map_err(input(&input_path))?;
    let out = required(&o.out, "out")?;
    let order = o
        .manifest
        .as_deref()
        .map(load_manifest)
        .transpose()?
        .map(|m| ChannelOrder::from_manifest(&m));
    let decoded = codec::decode(&bytes, &model, order.as_ref())?;
    let img = decoded.reconstruct(&model);
    write_image(&out, &img)?;
    write_sidecar(&out, &o)?;
    println!("decoded {}x{}", img.width(), img.height());
    if let Some(r) = &o.reference {
        let reference = read_image(r)?;
        println!("psnr {:.4} dB", psnr(&reference, &img)?);
    }
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct AblateOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of grayscale PGM test images.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Manifest whose bias-dominated channels are the outliers; without
    /// one they are flagged from the model bias directly.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Quantizer step [default: the model's].
    #[arg(long)]
    delta: Option<f64>,
    /// Output CSV `channel,bpp,delta_psnr,delta_msssim,is_outlier`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional TSV of (bpp, delta_psnr) series.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

pub fn ablate(flags: AblateOpts) -> Result<(), CliError> {
    let mut o = resolve(&flags, flags.config.as_deref())?;
    let model = load_model(&required(&o.model, "model")?)?;
    let delta = *o.delta.get_or_insert(model.delta());
    let images = load_images(&required(&o.images, "images")?)?;
    let out = required(&o.out, "out")?;
    let outliers = match o.manifest.as_deref().map(load_manifest).transpose()? {
        Some(m) => {
            if m.channel_count() != model.channels() {
                return Err(CliError::Input(
                    "manifest and model channel counts differ".into(),
                ));
            }
            m.structure.bias_channels
        }
        None => flag_bias_dominated(
            &model.bias().iter().map(|b| b.abs()).collect::<Vec<_>>(),
            DiscoveryParams::DEFAULT_BIAS_Z,
        ),
    };
    let rows = ablation_sweep(&model, &images, delta, &outliers)?;
    if rows.len() != model.channels() || rows.iter().enumerate().any(|(c, r)| r.channel != c) {
        return Err(CliError::Invariant(
            "sweep rows do not cover every channel once".into(),
        ));
    }
    write_file(&out, ablation_csv(&rows).as_bytes())?;
    write_sidecar(&out, &o)?;
    if let Some(p) = &o.plot_data {
        write_file(p, plot_data_tsv(&rows).as_bytes())?;
    }
    let report = correlation_report(&rows);
    println!("spearman {}", fmt_opt(report.spearman));
    println!("log_fit_r2 {}", fmt_opt(report.log_fit_r2()));
    println!("outliers {:?}", report.outliers);
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Slices of the flat baseline [default: task count of the grouped plan].
    #[arg(long)]
    flat_slices: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// base,per_channel,sync [default: 1,0.05,2].
    #[arg(long)]
    cost: Option<String>,
    /// Output comparison CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-task trace CSV of the manifest's plan.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Weights of the manifest; enables rows for every ordering strategy.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    tensor: Option<String>,
    #[arg(long)]
    bias: Option<String>,
}

fn parse_cost(s: &str) -> Result<CostModel, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Input(format!("cost must be base,per_channel,sync, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let c = CostModel {
        base_per_slice: v[0],
        per_channel: v[1],
        sync_overhead: v[2],
    };
    c.validate()?;
    if !(c.base_per_slice > 0.0 || c.per_channel > 0.0) {
        return Err(CliError::Input(
            "cost must give every slice positive time".into(),
        ));
    }
    Ok(c)
}

pub fn schedule(flags: ScheduleOpts) -> Result<(), CliError> {
    let mut o = resolve(&flags, flags.config.as_deref())?;
    let m = load_manifest(&required(&o.manifest, "manifest")?)?;
    let default_cost = CostModel::default();
    let cost_str = o.cost.get_or_insert_with(|| {
        format!(
            "{},{},{}",
            default_cost.base_per_slice, default_cost.per_channel, default_cost.sync_overhead
        )
    });
    let cost = parse_cost(cost_str)?;
    let workers = required(&o.workers, "workers")?;
    let out = required(&o.out, "out")?;
    let flat_slices = *o.flat_slices.get_or_insert(grouped_task_count(&m.plan));
    if flat_slices == 0 {
        return Err(CliError::Input("flat-slices must be at least 1".into()));
    }
    let c = m.channel_count();
    let plan = &m.plan;
    let mut dags = vec![
        ("flat".to_string(), build_dag_flat(flat_slices, c)),
        (
            format!("iscs_{}", plan.ordering_strategy),
            build_dag_grouped(plan),
        ),
    ];
    if let Some(w) = &o.weights {
        let tensor = o.tensor.clone().unwrap_or_else(|| m.source.tensor.clone());
        let bias = o.bias.clone().or_else(|| m.source.bias_tensor.clone());
        let k = load_kernels(w, &tensor, bias.as_deref())?;
        if k.kernels.c_out() != c {
            return Err(CliError::Input(
                "weights and manifest channel counts differ".into(),
            ));
        }
        let scores = ChannelScores::compute(&k.kernels);
        for s in OrderingStrategy::ALL
            .into_iter()
            .filter(|&s| s != plan.ordering_strategy)
        {
            let alt = build_plan(
                &m.structure,
                &scores.similarity,
                m.params.discovery.similarity_mode,
                plan.slice_count,
                s,
            )?;
            dags.push((format!("iscs_{s}"), build_dag_grouped(&alt)));
        }
    }
    let naive = build_naive_plan(
        c,
        m.params.discovery.group_size,
        m.params.effective_num_groups,
        plan.slice_count,
    )?;
    dags.push(("naive".to_string(), build_dag_grouped(&naive)));

    let rows = compare_strategies(&dags, &cost, workers)?;
    write_file(&out, strategies_csv(&rows).as_bytes())?;
    write_sidecar(&out, &o)?;
    if let Some(t) = &o.trace {
        let report = simulate(&dags[1].1, &cost, workers)?;
        write_file(t, trace_csv(&dags[1].1, &report).as_bytes())?;
    }
    for r in &rows {
        println!(
            "{:<22} makespan {:>10.4}  speedup {:.4}",
            r.strategy, r.makespan, r.speedup
        );
    }
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct GenImagesOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// [default: 8]
    #[arg(long)]
    count: Option<usize>,
    /// Side length in pixels [default: 256].
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the 8-bit samples [default: 40].
    #[arg(long)]
    contrast: Option<f64>,
}

pub fn gen_images(flags: GenImagesOpts) -> Result<(), CliError> {
    let mut o = resolve(&flags, flags.config.as_deref())?;
    let count = *o.count.get_or_insert(8);
    let size = *o.size.get_or_insert(256);
    let seed = *o.seed.get_or_insert(0);
    let contrast = *o.contrast.get_or_insert(40.0);
    let out = required(&o.out, "out")?;
    if size == 0 || contrast.is_nan() || contrast < 0.0 {
        return Err(CliError::Input(
            "size must be positive and contrast non-negative".into(),
        ));
    }
    fs::create_dir_all(&out).map_err(input(&out))?;
    for i in 0..count {
        let img = one_over_f_image(size, size, seed.wrapping_add(i as u64), contrast);
        let path = out.join(format!("img_{i:03}.pgm"));
        write_image(&path, &img).map_err(|e| CliError::Input(e.to_string()))?;
    }
    let mut cfg = serde_json::to_vec_pretty(&o).unwrap();
    cfg.push(b'\n');
    write_file(&out.join("config.json"), &cfg)?;
    println!("wrote {count} images to {}", out.display());
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct GenPlantedOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output container with `planted.weight` and `planted.bias`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

pub const PLANTED_WEIGHT: &str = "planted.weight";
pub const PLANTED_BIAS: &str = "planted.bias";

pub fn gen_planted(flags: GenPlantedOpts) -> Result<(), CliError> {
    let mut o = resolve(&flags, flags.config.as_deref())?;
    let seed = *o.seed.get_or_insert(0);
    let out = required(&o.out, "out")?;
    let p = Planted::generate(seed);
    let mut tf = TensorFile::new();
    insert_kernel_set(&mut tf, &p.kernels, PLANTED_WEIGHT, Some(PLANTED_BIAS))?;
    write_tensor_file(&out, &tf)?;
    write_sidecar(&out, &o)?;
    let truth = json!({
        "seed": seed,
        "group_size": p.params.group_size,
        "num_groups": p.params.num_groups,
        "groups": p.groups.iter().map(|g| json!({"sc": g.sc, "sa": g.sa})).collect::<Vec<_>>(),
        "bias_channels": p.bias_channels,
        "residual": p.residual,
    });
    let mut bytes = serde_json::to_vec_pretty(&truth).unwrap();
    bytes.push(b'\n');
    let mut truth_path = out.as_os_str().to_owned();
    truth_path.push(".truth.json");
    write_file(Path::new(&truth_path), &bytes)?;
    println!(
        "planted {} channels: {} groups of {}, {} bias channels",
        p.params.channels(),
        p.params.num_groups,
        p.params.group_size,
        p.bias_channels.len()
    );
    Ok(())
}
