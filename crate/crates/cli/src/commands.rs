use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use iformer::analysis::{count_flops, feature_spectrum, Branch, Feed, Selector, SpectrumReport};
use iformer::backbone::{gradcheck_model, GradcheckOptions, IFormer, ModelConfig, PRESETS};
use iformer::io::{self, csv, ConfigFile, Normalize};
use iformer::params::ParamStore;
use iformer::train::{self, Accuracy, AdamW, TrainState, Variant, BATCH_SIZE, HIGH_BANDS, IMAGE_SIZE, NUM_BANDS};
use iformer::{Error, Real, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::{ModelArgs, WeightArgs};

/// Validates `IFORMER_THREADS`. Every computation here is sequential, so any
/// positive cap is honoured trivially.
pub fn threads() -> Result<usize> {
    match std::env::var("IFORMER_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("IFORMER_THREADS must be a positive integer, got {v:?}"))),
    }
}

fn with_context(err: Error, ctx: &str) -> Error {
    match err {
        Error::Dimension(m) => Error::Dimension(format!("{ctx}: {m}")),
        Error::Partition(m) => Error::Partition(format!("{ctx}: {m}")),
        Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        Error::Usage(m) => Error::Usage(format!("{ctx}: {m}")),
        Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
        Error::Corruption(m) => Error::Corruption(format!("{ctx}: {m}")),
        Error::Mismatch(m) => Error::Mismatch(format!("{ctx}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
        Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{ctx}: {e}"))),
    }
}

/// The configuration and its file seed, if any.
fn resolve(args: &ModelArgs) -> Result<(ModelConfig, Option<u64>)> {
    let (config, seed) = match (&args.preset, &args.config) {
        (Some(name), _) => (ModelConfig::preset(name)?, None),
        (None, Some(path)) if !Path::new(path).exists() && PRESETS.contains(&path.as_str()) => {
            (ModelConfig::preset(path)?, None)
        }
        (None, Some(path)) => {
            let file = io::load_config(path)?;
            (file.model, file.seed)
        }
        (None, None) => return Err(Error::Usage("one of --preset or --config is required".into())),
    };
    config.validate()?;
    Ok((config, seed))
}

fn load_store<T: Real>(path: &str) -> Result<ParamStore<T>> {
    let bytes = fs::read(path).map_err(|e| with_context(e.into(), path))?;
    let store = match io::decode::<f32>(&bytes) {
        Ok(s) => Ok(s.cast()),
        // stored in the other precision
        Err(Error::Mismatch(_)) => io::decode::<f64>(&bytes).map(|s| s.cast()),
        Err(e) => Err(e),
    };
    store.map_err(|e| with_context(e, path))
}

fn params<T: Real>(model: &IFormer, args: &WeightArgs, file_seed: Option<u64>) -> Result<ParamStore<T>> {
    match &args.weights {
        Some(path) => {
            let store = load_store(path)?;
            model.layout.validate(&store).map_err(|e| with_context(e, path))?;
            Ok(store)
        }
        None => Ok(model.init_params(args.seed.or(file_seed).unwrap_or(0))),
    }
}

fn checksum(t: &Tensor<f32>) -> String {
    let mut hash = Sha256::new();
    for v in t.data() {
        hash.update(v.to_le_bytes());
    }
    hash.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn noise<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::of(StandardNormal.sample(&mut rng)))
}

fn ratio(high: usize, total: usize) -> String {
    format!("{high}/{total}")
}

pub fn describe(args: &ModelArgs, input_size: Option<usize>, csv_path: Option<&str>) -> Result<u8> {
    let (config, _) = resolve(args)?;
    let model = IFormer::new(&config)?;
    let size = input_size.unwrap_or(config.input_size);
    if size == 0 || !size.is_multiple_of(32) {
        return Err(Error::Usage(format!("--input-size {size} must be a positive multiple of 32")));
    }
    let cost = count_flops(&model, size);
    println!("{} at {size}x{size}, head_dim {}, {} classes", config.name, config.head_dim, config.num_classes);
    let mut res = size / 4;
    for (i, (stage, plans)) in config.stages.iter().zip(model.plans()).enumerate() {
        let path = format!("stage{}", i + 1);
        let (params, flops) = cost
            .rows
            .iter()
            .filter(|r| r.path == path || r.path.starts_with(&format!("{path}.")))
            .fold((0, 0), |(p, f), r| (p + r.params, f + r.flops));
        println!(
            "{path}: {res}x{res}, depth {}, C {}, heads {}, pool stride {}, C_h/h {} -> {}, params {params}, FLOPs {flops}",
            stage.depth,
            stage.channels,
            stage.heads,
            stage.pool_stride,
            stage.high_ratio_start,
            stage.high_ratio_end,
        );
        let ramp: Vec<String> = plans.iter().map(|p| ratio(p.high_heads, stage.heads)).collect();
        println!("  ramp C_h/h per block: {}", ramp.join(" "));
        let split: Vec<String> = plans.iter().map(|p| format!("{}+{}", p.high_channels, p.low_channels)).collect();
        println!("  C_h+C_l per block: {}", split.join(" "));
        res /= 2;
    }
    println!(
        "total: params {} ({:.2} M), FLOPs {} ({:.2} G, multiply-accumulates)",
        cost.total_params(),
        cost.total_params() as f64 / 1e6,
        cost.total_flops(),
        cost.total_flops() as f64 / 1e9
    );
    if let Some(path) = csv_path {
        csv::write_cost_csv(&cost, path)?;
    }
    Ok(0)
}

pub fn forward(
    args: &ModelArgs,
    weights: &WeightArgs,
    image: Option<&str>,
    random: bool,
    input_seed: u64,
    dump_stage: Option<usize>,
    out: Option<&str>,
) -> Result<u8> {
    let (config, file_seed) = resolve(args)?;
    let model = IFormer::new(&config)?;
    let params: ParamStore<f32> = params(&model, weights, file_seed)?;
    let input = match (image, random) {
        (Some(path), _) => io::load_ppm(path, Normalize::default()).map_err(|e| with_context(e, path))?,
        (None, true) => noise(&[1, config.input_size, config.input_size, 3], input_seed),
        (None, false) => return Err(Error::Usage("give --image or --random".into())),
    };
    if let Some(k) = dump_stage {
        if !(1..=config.stages.len()).contains(&k) {
            return Err(Error::Usage(format!("--dump-stage {k} must be in 1..={}", config.stages.len())));
        }
    }
    let features = model.features(&params, &input)?;
    println!("input {:?} sha256:{}", input.shape(), checksum(&input));
    for (i, f) in features.iter().enumerate() {
        println!("stage{} {:?} sha256:{}", i + 1, f.shape(), checksum(f));
    }
    let logits = model.classify(&params, &input)?;
    println!("logits {:?} sha256:{}", logits.shape(), checksum(&logits));
    if let (Some(k), Some(path)) = (dump_stage, out) {
        let mut store = ParamStore::new();
        store.insert(format!("stage{k}"), features[k - 1].clone())?;
        io::save_weights(&store, path)?;
        println!("wrote stage{k} to {path}");
    }
    Ok(0)
}

pub struct SpectrumArgs<'a> {
    pub model: &'a ModelArgs,
    pub weights: &'a WeightArgs,
    pub stage: usize,
    pub block: usize,
    pub branch: &'a str,
    pub compare: Option<&'a str>,
    pub input: &'a str,
    pub image: Option<&'a str>,
    pub feed: &'a str,
    pub input_seed: u64,
    pub batch: usize,
    pub bins: usize,
    pub out: Option<&'a str>,
}

fn print_report(path: &str, r: &SpectrumReport) {
    println!(
        "{path}: {}x{} maps, {} bins ({} empty merged)",
        r.map_shape[0],
        r.map_shape[1],
        r.bins.len(),
        r.merged.len()
    );
    for (i, b) in r.bins.iter().enumerate() {
        println!("  bin {i:2} f {:.4}  log amp {:.4}  delta {:+.4}", b.freq_mean, b.log_amplitude, b.delta);
    }
    println!("  delta log amplitude (highest - lowest bin) {:+.4}", r.delta_log_amplitude);
    println!("  top-quartile delta {:+.4}", r.top_quartile_delta());
    println!(
        "  zero-frequency energy fraction {:.4}, concentrated at zero frequency: {}",
        r.dc_energy_fraction,
        if r.zero_frequency_concentrated() { "yes" } else { "no" }
    );
}

pub fn spectrum(a: SpectrumArgs) -> Result<u8> {
    let (config, file_seed) = resolve(a.model)?;
    let model = IFormer::new(&config)?;
    let params: ParamStore<f64> = params(&model, a.weights, file_seed)?;
    let branch: Branch = a.branch.parse()?;
    let selector = Selector { stage: a.stage, block: a.block, branch };
    let feed = match a.feed {
        "image" => Feed::Image,
        "block" => Feed::Block,
        other => return Err(Error::Usage(format!("unknown --feed {other:?}; valid: image, block"))),
    };
    if a.batch == 0 {
        return Err(Error::Usage("--batch must be positive".into()));
    }
    let input = if let Some(path) = a.image {
        if feed == Feed::Block {
            return Err(Error::Usage("--image feeds the whole trunk; use --feed image".into()));
        }
        io::load_ppm::<f64>(path, Normalize::default()).map_err(|e| with_context(e, path))?
    } else {
        // out-of-range stages still get a shape; feature_spectrum reports the selector
        let si = a.stage.clamp(1, config.stages.len()) - 1;
        let shape = match feed {
            Feed::Image => [a.batch, config.input_size, config.input_size, 3],
            Feed::Block => {
                let res = (config.input_size / 4) >> si;
                [a.batch, res, res, config.stages[si].channels]
            }
        };
        match a.input {
            "noise" => noise(&shape, a.input_seed),
            "constant" => {
                let mut rng = ChaCha8Rng::seed_from_u64(a.input_seed);
                let token: Vec<f64> = (0..shape[3]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::from_fn(&shape, |i| token[i % shape[3]])
            }
            other => return Err(Error::Usage(format!("unknown --input {other:?}; valid: noise, constant"))),
        }
    };
    let report = feature_spectrum(&model, &params, &input, feed, selector, a.bins)?;
    print_report(&selector.tap_path(), &report);
    if let Some(other) = a.compare {
        let other = Selector { branch: other.parse()?, ..selector };
        let second = feature_spectrum(&model, &params, &input, feed, other, a.bins)?;
        print_report(&other.tap_path(), &second);
        let (x, y) = (report.top_quartile_delta(), second.top_quartile_delta());
        let verdict = if x < y { "lower" } else if x > y { "higher" } else { "equal" };
        println!("{branch} top-quartile delta {x:+.4} is {verdict} than {} {y:+.4}", other.branch);
    }
    if let Some(path) = a.out {
        csv::write_spectrum_csv(&report, path)?;
    }
    Ok(0)
}

pub fn gradcheck(
    args: &ModelArgs,
    tolerance: f64,
    seed: u64,
    batch: usize,
    samples: usize,
    sabotage: Option<String>,
) -> Result<u8> {
    let (config, _) = resolve(args)?;
    let model = IFormer::new(&config)?;
    let opts = GradcheckOptions { batch, samples_per_group: samples, seed, sabotage, ..GradcheckOptions::default() };
    let report = gradcheck_model(&model, &opts)?;
    for g in &report.groups {
        let status = if g.max_rel_error < tolerance { "ok" } else { "FAIL" };
        println!("{:<40} {:>3} checked  max rel err {:.3e}  {status}", g.name, g.checked, g.max_rel_error);
    }
    let failures = report.failures(tolerance);
    println!(
        "{}: max relative error {:.3e} over {} groups, tolerance {tolerance:e}",
        if failures.is_empty() { "PASS" } else { "FAIL" },
        report.max_rel_error(),
        report.groups.len()
    );
    if failures.is_empty() {
        return Ok(0);
    }
    let names: Vec<&str> = failures.iter().map(|g| g.name.as_str()).collect();
    println!("failing groups: {}", names.join(", "));
    Ok(4)
}

fn toy_config() -> ModelConfig {
    ModelConfig::preset("iformer-micro").expect("built-in preset")
}

fn accuracy_line(acc: &Accuracy) -> String {
    let classes: Vec<String> = acc.per_class.iter().map(|a| format!("{a:.3}")).collect();
    format!("{:.3} (per band {})", acc.overall, classes.join(" "))
}

pub fn train_toy(steps: usize, seed: u64, lr: f64, out: &str) -> Result<u8> {
    let config = toy_config();
    debug_assert!(config.num_classes == NUM_BANDS && config.input_size == IMAGE_SIZE);
    fs::create_dir_all(out)?;
    let dir = Path::new(out);
    let (train_set, test_set) = train::gen_split(seed)?;
    let model = IFormer::new(&config)?;
    let mut params: ParamStore<f32> = model.init_params(seed);
    let initial = train::evaluate(&model, &params, &test_set)?;
    let mut state = TrainState::new(&model, AdamW { lr, ..AdamW::default() }, seed);
    let losses = train::train(&model, &mut params, &mut state, &train_set, steps, BATCH_SIZE)?;
    let acc = train::evaluate(&model, &params, &test_set)?;

    csv::write_file(&csv::loss_csv(&losses), dir.join("loss.csv"))?;
    let mut table = String::from("class,initial_accuracy,final_accuracy\n");
    for (c, (a, b)) in initial.per_class.iter().zip(&acc.per_class).enumerate() {
        let _ = writeln!(table, "{c},{},{}", csv::float(*a), csv::float(*b));
    }
    let _ = writeln!(table, "overall,{},{}", csv::float(initial.overall), csv::float(acc.overall));
    csv::write_file(&table, dir.join("accuracy.csv"))?;
    io::save_weights(&params, dir.join("weights.ifw"))?;
    io::save_config(&ConfigFile { model: config, seed: Some(seed) }, dir.join("config.toml"))?;

    println!("{} train / {} test images, {steps} steps, batch {BATCH_SIZE}, lr {lr:e}", train_set.len(), test_set.len());
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        let avg = train::moving_average(&losses, 50);
        println!("loss {first:.4} -> {last:.4} (50-step average {:.4} -> {:.4})", avg[0], avg[avg.len() - 1]);
    }
    println!("held-out accuracy at step 0: {}", accuracy_line(&initial));
    println!("held-out accuracy at step {steps}: {}", accuracy_line(&acc));
    println!("wrote loss.csv, accuracy.csv, weights.ifw, config.toml to {out}");
    Ok(0)
}

pub fn ablate(names: &[String], seeds: &[u64], steps: usize, out: &str) -> Result<u8> {
    let variants: Vec<Variant> = if names.is_empty() {
        Variant::ALL.to_vec()
    } else {
        names.iter().map(|n| n.parse()).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Usage("--seeds needs at least one seed".into()));
    }
    let mut table = String::from("variant,seed,steps,accuracy,high_band_accuracy");
    for c in 0..NUM_BANDS {
        let _ = write!(table, ",band{c}_accuracy");
    }
    table.push_str(",status\n");
    let mut failed = false;
    for &seed in seeds {
        let (train_set, test_set) = train::gen_split(seed)?;
        for row in train::run_ablation(&variants, &train_set, &test_set, steps, seed) {
            let _ = write!(table, "{},{},{}", row.variant, row.seed, row.steps);
            match &row.result {
                Ok(acc) => {
                    let _ = write!(table, ",{},{}", csv::float(acc.overall), csv::float(acc.mean_over(&HIGH_BANDS)));
                    for a in &acc.per_class {
                        let _ = write!(table, ",{}", csv::float(*a));
                    }
                    table.push_str(",ok\n");
                    println!(
                        "{:<14} seed {seed}: accuracy {:.3}, high bands {:.3}",
                        row.variant.name(),
                        acc.overall,
                        acc.mean_over(&HIGH_BANDS)
                    );
                }
                Err(e) => {
                    failed = true;
                    table.push_str(&",".repeat(2 + NUM_BANDS));
                    let _ = writeln!(table, ",\"{}\"", e.to_string().replace('"', "'"));
                    println!("{:<14} seed {seed}: {e}", row.variant.name());
                }
            }
        }
    }
    csv::write_file(&table, out)?;
    println!("wrote {out}");
    Ok(if failed { 4 } else { 0 })
}
