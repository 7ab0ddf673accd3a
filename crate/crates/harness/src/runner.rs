//! End-to-end experiment execution: build the per-seed pipeline, run the
//! selected method, evaluate on an unbiased held-out set, and write every
//! artifact plus a manifest that reproduces the run byte-for-byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vlbc_core::classify::{self, Classifier, TrainOutcome, WeightMode};
use vlbc_core::control::{
    compute_stats, plan_amplification, plan_mitigation, plan_sampling, select_and_augment,
    AugmentationPlan, DatasetStats, ShortfallReport,
};
use vlbc_core::embedding::{make_dipoles, median_heuristic_gamma, ImageEncoder, SemanticDipole};
use vlbc_core::fairness::{evaluate_suite, FairnessReport};
use vlbc_core::paths::{train_paths, TraversalDirection, TraversalPolicy, WarpingField};
use vlbc_core::pseudo::{
    fit_pseudo_labeler, pseudo_label_pool, PseudoLabeledItem, PseudoLabeler, PseudoLabelerConfig,
};
use vlbc_core::rng::{derive_seed, streams};
use vlbc_core::world::{
    sample_dataset_from_cells, sample_real_dataset, solve_cell_probs,
    solve_cell_probs_with_marginal, BiasSpec, LabeledSample, WorldSpec,
};
use vlbc_core::Rng;

use crate::config::{ExperimentConfig, Method};
use crate::error::{HarnessError, Result};
use crate::formats;
use crate::report::{csv_cell, csv_opt_cell};

pub const MANIFEST_VERSION: u32 = 1;

/// Everything one seed shares across methods: the world, datasets, labeler,
/// trained paths, and the baseline classifier all derive from the run seed
/// alone, never from the method.
pub struct SeedPipeline {
    pub seed: u64,
    pub world: WorldSpec,
    pub xr: Vec<LabeledSample>,
    pub stats: DatasetStats,
    pub pool: Vec<PseudoLabeledItem>,
    pub labeler: PseudoLabeler,
    pub encoder: ImageEncoder,
    pub dipoles: Vec<SemanticDipole>,
    pub dipole_gamma: f64,
    pub fields: Vec<WarpingField>,
    pub field_directions: Vec<usize>,
    pub paths_loss: Vec<f64>,
    pub test: Vec<LabeledSample>,
    pub baseline: TrainOutcome,
}

/// Build the full method-independent pipeline for one seed. The world and
/// every dataset derive from the config's world seed, so run seeds share
/// them; the run seed drives labeler fitting, path training, classifier
/// training, and augmentation draws.
pub fn build_seed_pipeline(cfg: &ExperimentConfig, seed: u64) -> Result<SeedPipeline> {
    let world_seed = cfg.world.seed;
    let world =
        WorldSpec::build(&cfg.world.to_world_config(derive_seed(world_seed, streams::WORLD)))?;
    let bias = cfg.bias.to_bias_spec();
    let xr = sample_real_dataset(
        cfg.data.train_size,
        &bias,
        &world,
        derive_seed(world_seed, streams::REAL_DATASET),
    )?;
    let stats = compute_stats(&xr, bias.attribute_index)?;

    let pool_bias = cfg.pool.to_bias_spec(bias.attribute_index);
    let pool_cells = match cfg.pool.attribute_marginal {
        Some(p_a) => solve_cell_probs_with_marginal(
            pool_bias.correlation,
            pool_bias.group_imbalance,
            p_a,
        )?,
        None => solve_cell_probs(pool_bias.correlation, pool_bias.group_imbalance)?,
    };
    let raw_pool = vlbc_core::world::sample_synthetic_pool_from_cells(
        cfg.pool.size,
        &pool_bias,
        &pool_cells,
        &world,
        derive_seed(world_seed, streams::POOL),
    )?;

    // the labeler's split is clean: unbiased and free of observation noise,
    // matching the generated images it will annotate
    let mut clean_world = world.clone();
    clean_world.noise_std = 0.0;
    let unbiased = BiasSpec {
        attribute_index: bias.attribute_index,
        correlation: 0.0,
        group_imbalance: 0.5,
    };
    // the labeler and the warped paths are pre-trained assets like the
    // generator itself: they derive from the world seed and are shared by
    // every run seed
    let labeler_seed = derive_seed(world_seed, streams::LABELER);
    let labeler_data = sample_real_dataset(
        cfg.data.labeler_size,
        &unbiased,
        &clean_world,
        labeler_seed,
    )?;
    let labeler_cfg = PseudoLabelerConfig {
        epochs: cfg.labeler.epochs,
        learning_rate: cfg.labeler.learning_rate,
        batch_size: cfg.labeler.batch_size,
        holdout_fraction: cfg.labeler.holdout_fraction,
        noise_rate: cfg.labeler.noise_rate,
        seed: labeler_seed,
    };
    let labeler = fit_pseudo_labeler(&labeler_data, &labeler_cfg)?;
    let pool = pseudo_label_pool(&raw_pool, &labeler);

    let encoder = ImageEncoder::build(
        world.d_x,
        cfg.embedding.dimension,
        derive_seed(world_seed, streams::ENCODER),
    )?;
    let field_directions = cfg.dipole_directions();
    let dipoles = make_dipoles(
        &world,
        &encoder,
        &field_directions,
        cfg.embedding.prototype_scale,
        &cfg.embedding.prompts,
    )?;
    let dipole_gamma = cfg
        .embedding
        .gamma
        .unwrap_or_else(|| median_heuristic_gamma(&dipoles));

    let mut init_rng = Rng::substream(world_seed, streams::PATH_INIT);
    let mut fields: Vec<WarpingField> = (0..dipoles.len())
        .map(|_| WarpingField::random(world.d_s, cfg.paths.supports, &mut init_rng))
        .collect::<vlbc_core::Result<_>>()?;
    let paths_cfg = cfg
        .paths
        .to_training_config(derive_seed(world_seed, streams::PATH_TRAIN));
    let world_for_sampler = world.clone();
    let outcome = train_paths(
        &mut fields,
        &dipoles,
        &world,
        &encoder,
        dipole_gamma,
        &paths_cfg,
        &mut |rng| world_for_sampler.sample_code(rng),
    )?;

    // held-out test: no correlation and balanced protected groups, with the
    // training set's attribute prior, so the accuracy gap reflects model
    // bias rather than a shifted class mixture
    let train_cells = solve_cell_probs(bias.correlation, bias.group_imbalance)?;
    let train_attr_marginal = train_cells.p[1][0] + train_cells.p[1][1];
    let test_cells = solve_cell_probs_with_marginal(0.0, 0.5, train_attr_marginal)?;
    let test = sample_dataset_from_cells(
        cfg.data.test_size,
        bias.attribute_index,
        &test_cells,
        &world,
        derive_seed(world_seed, streams::TEST_SET),
    )?
    .into_iter()
    .map(|(_, s)| s)
    .collect::<Vec<_>>();

    let baseline_cfg = cfg.train_baseline.to_train_config(
        WeightMode::Uniform,
        derive_seed(seed, streams::BASELINE_TRAIN),
    );
    let baseline = classify::train(&xr, bias.attribute_index, &baseline_cfg, None)?;

    Ok(SeedPipeline {
        seed,
        world,
        xr,
        stats,
        pool,
        labeler,
        encoder,
        dipoles,
        dipole_gamma,
        fields,
        field_directions,
        paths_loss: outcome.loss_trace,
        test,
        baseline,
    })
}

/// Everything a method run produces beyond the shared pipeline.
pub struct MethodOutcome {
    pub report: FairnessReport,
    pub plan: Option<AugmentationPlan>,
    pub shortfall: Option<ShortfallReport>,
    pub augmented: Vec<LabeledSample>,
    pub final_classifier: Classifier,
    pub finetune_loss: Option<Vec<f64>>,
}

fn traversal_policy(cfg: &ExperimentConfig) -> TraversalPolicy {
    TraversalPolicy {
        epsilon: cfg.traversal.epsilon,
        steps_min: cfg.traversal.steps_min,
        steps_max: cfg.traversal.steps_max,
        // the effective direction is derived from the plan target
        direction: TraversalDirection::TowardPositive,
    }
}

/// Run one method on a built pipeline: construct its training set, fine-tune
/// from the shared baseline, and evaluate on the unbiased test set.
pub fn execute_method(
    cfg: &ExperimentConfig,
    pipe: &SeedPipeline,
    method: Method,
) -> Result<MethodOutcome> {
    let attribute_index = cfg.bias.attribute_index;
    if method == Method::Baseline {
        let report = evaluate_suite(&pipe.baseline.classifier, &pipe.test, attribute_index)?;
        return Ok(MethodOutcome {
            report,
            plan: None,
            shortfall: None,
            augmented: Vec::new(),
            final_classifier: pipe.baseline.classifier.clone(),
            finetune_loss: None,
        });
    }

    let (plan, filtering) = match method {
        Method::Baseline => unreachable!(),
        Method::Weighting => (None, false),
        Method::BaselineSampling => (Some(plan_sampling(&pipe.stats)), false),
        Method::VlbcMinus => (Some(plan_mitigation(&pipe.stats)), true),
        Method::VlbcMinusNofilter => (Some(plan_mitigation(&pipe.stats)), false),
        Method::VlbcPlus => (Some(plan_amplification(&pipe.stats)), true),
    };

    let (augmented, shortfall) = match &plan {
        None => (Vec::new(), None),
        Some(plan) => {
            let field_refs: Vec<(usize, &WarpingField)> = pipe
                .field_directions
                .iter()
                .cloned()
                .zip(pipe.fields.iter())
                .collect();
            let mut rng = Rng::substream(pipe.seed, streams::AUGMENT);
            let (xa, report) = select_and_augment(
                plan,
                &pipe.pool,
                &field_refs,
                &traversal_policy(cfg),
                &pipe.world,
                &pipe.labeler,
                filtering,
                &mut rng,
            )?;
            (xa, Some(report))
        }
    };

    let weight_mode = if method == Method::Weighting {
        WeightMode::InverseCellFrequency
    } else {
        WeightMode::Uniform
    };
    let finetune_cfg = cfg.train_finetune.to_train_config(
        weight_mode,
        derive_seed(pipe.seed, streams::FINETUNE_TRAIN),
    );
    let mut training_set = pipe.xr.clone();
    training_set.extend(augmented.iter().cloned());
    let finetuned = classify::train(
        &training_set,
        attribute_index,
        &finetune_cfg,
        Some(&pipe.baseline.classifier),
    )?;
    let report = evaluate_suite(&finetuned.classifier, &pipe.test, attribute_index)?;
    Ok(MethodOutcome {
        report,
        plan,
        shortfall,
        augmented,
        final_classifier: finetuned.classifier,
        finetune_loss: Some(finetuned.loss_trace),
    })
}

/// One row of the run-level report CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub report: FairnessReport,
}

pub fn reports_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("task,method,seed,accuracy,f1,acc_diff,delta_a,delta_m\n");
    for row in rows {
        let r = &row.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.task,
            row.method,
            row.seed,
            csv_cell(r.accuracy),
            csv_cell(r.f1),
            csv_opt_cell(r.acc_diff),
            csv_opt_cell(r.delta_a),
            csv_opt_cell(r.delta_m),
        ));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    /// Every file the run wrote, relative to the run directory.
    pub artifacts: Vec<String>,
}

pub struct RunSummary {
    pub rows: Vec<ReportRow>,
    pub out_dir: PathBuf,
}

fn task_name(cfg: &ExperimentConfig) -> String {
    format!("attr{}", cfg.bias.attribute_index)
}

struct ArtifactWriter {
    root: PathBuf,
    written: Vec<String>,
}

impl ArtifactWriter {
    fn new(root: &Path) -> Self {
        ArtifactWriter {
            root: root.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn write(&mut self, rel: &str, content: &str) -> Result<()> {
        formats::write_string(&self.root.join(rel), content)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, &text)
    }
}

fn write_seed_artifacts(
    writer: &mut ArtifactWriter,
    cfg: &ExperimentConfig,
    pipe: &SeedPipeline,
    outcome: &MethodOutcome,
) -> Result<()> {
    let dir = format!("seed_{}", pipe.seed);
    writer.write_json(&format!("{dir}/report.json"), &outcome.report)?;
    writer.write_json(&format!("{dir}/stats.json"), &pipe.stats)?;
    if let Some(plan) = &outcome.plan {
        writer.write_json(&format!("{dir}/plan.json"), plan)?;
    }
    if let Some(shortfall) = &outcome.shortfall {
        writer.write_json(&format!("{dir}/shortfall.json"), shortfall)?;
    }
    if !outcome.augmented.is_empty() {
        writer.write(
            &format!("{dir}/xa.records"),
            &formats::write_dataset(&outcome.augmented)?,
        )?;
    }
    writer.write(
        &format!("{dir}/baseline_weights.txt"),
        &formats::write_classifier(&pipe.baseline.classifier),
    )?;
    writer.write(
        &format!("{dir}/final_weights.txt"),
        &formats::write_classifier(&outcome.final_classifier),
    )?;
    writer.write(
        &format!("{dir}/baseline_loss.csv"),
        &formats::write_loss_trace(&pipe.baseline.loss_trace),
    )?;
    if let Some(trace) = &outcome.finetune_loss {
        writer.write(
            &format!("{dir}/finetune_loss.csv"),
            &formats::write_loss_trace(trace),
        )?;
    }
    writer.write(
        &format!("{dir}/paths_loss.csv"),
        &formats::write_loss_trace(&pipe.paths_loss),
    )?;
    writer.write(&format!("{dir}/fields.txt"), &formats::write_fields(&pipe.fields)?)?;
    writer.write(
        &format!("{dir}/labeler.txt"),
        &formats::write_labeler(&pipe.labeler)?,
    )?;
    let _ = cfg;
    Ok(())
}

/// Run the configured method over every seed and write the run directory.
/// Seeds execute as independent parallel jobs; all writes happen afterward
/// in seed order, and the manifest lists every artifact.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let method = cfg.run.method;
    let seeds = cfg.run.seeds.clone();

    let results: Vec<Result<(SeedPipeline, MethodOutcome)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || -> Result<(SeedPipeline, MethodOutcome)> {
                    let pipe = build_seed_pipeline(cfg, seed)?;
                    let outcome = execute_method(cfg, &pipe, method)?;
                    Ok((pipe, outcome))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(HarnessError::Config("seed job panicked".into())))
            })
            .collect()
    });

    let mut writer = ArtifactWriter::new(out_dir);
    let mut rows = Vec::new();
    for result in results {
        let (pipe, outcome) = result?;
        rows.push(ReportRow {
            task: task_name(cfg),
            method: method.name().to_string(),
            seed: pipe.seed,
            report: outcome.report.clone(),
        });
        write_seed_artifacts(&mut writer, cfg, &pipe, &outcome)?;
    }
    writer.write("reports.csv", &reports_csv(&rows))?;

    let mut artifacts = writer.written.clone();
    artifacts.push("manifest.json".to_string());
    artifacts.sort();
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        kind: "run".to_string(),
        config: cfg.clone(),
        seeds,
        artifacts,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    formats::write_string(&out_dir.join("manifest.json"), &text)?;

    Ok(RunSummary {
        rows,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Load the resolved config back out of a manifest.
pub fn config_from_manifest(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(HarnessError::Format(format!(
            "manifest version {} unsupported",
            manifest.format_version
        )));
    }
    manifest.config.validate()?;
    Ok(manifest.config)
}

/// Remove all but ceil(fraction * count) of the minority-protected samples,
/// chosen uniformly under the seed. fraction = 1 keeps the dataset
/// untouched, order included.
pub fn subsample_minority(
    xr: &[LabeledSample],
    minority_protected: bool,
    fraction: f64,
    seed: u64,
) -> Vec<LabeledSample> {
    if fraction >= 1.0 {
        return xr.to_vec();
    }
    let minority_idx: Vec<usize> = xr
        .iter()
        .enumerate()
        .filter(|(_, s)| s.protected == minority_protected)
        .map(|(i, _)| i)
        .collect();
    let keep_count = (fraction * minority_idx.len() as f64).ceil() as usize;
    let mut shuffled = minority_idx.clone();
    let mut rng = Rng::substream(seed, streams::ABLATION);
    rng.shuffle(&mut shuffled);
    let kept: std::collections::BTreeSet<usize> = shuffled.into_iter().take(keep_count).collect();
    xr.iter()
        .enumerate()
        .filter(|(i, s)| s.protected != minority_protected || kept.contains(i))
        .map(|(_, s)| s.clone())
        .collect()
}

/// One row of an ablation sweep CSV.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub point: String,
    pub fraction: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub acc_diff: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("point,fraction,seed,accuracy,acc_diff\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.point,
            r.fraction,
            r.seed,
            csv_cell(r.accuracy),
            csv_opt_cell(r.acc_diff),
        ));
    }
    out
}

pub struct AblationSummary {
    pub rows_per_method: Vec<(Method, Vec<SweepRow>)>,
    pub out_dir: PathBuf,
}

/// Minority-fraction sweep. At each fraction the minority-protected cell of
/// the training set is subsampled and a from-scratch model is trained on it
/// (no augmentation), so the sweep isolates the data-composition trend. The
/// final "1.0+aug" point is each method's full pipeline on the whole set.
pub fn run_ablation(cfg: &ExperimentConfig, out_dir: &Path) -> Result<AblationSummary> {
    cfg.validate()?;
    let methods = cfg.ablation_methods();
    let mut fractions = cfg.run.fractions.clone();
    fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let seeds = cfg.run.seeds.clone();
    let attribute_index = cfg.bias.attribute_index;

    struct SeedSweep {
        seed: u64,
        fraction_rows: Vec<(f64, f64, Option<f64>)>,
        method_rows: Vec<(Method, f64, Option<f64>)>,
    }

    let results: Vec<Result<SeedSweep>> = std::thread::scope(|scope| {
        let fractions = &fractions;
        let methods = &methods;
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || -> Result<SeedSweep> {
                    let pipe = build_seed_pipeline(cfg, seed)?;
                    let mut fraction_rows = Vec::new();
                    for &fraction in fractions {
                        let subsampled = subsample_minority(
                            &pipe.xr,
                            pipe.stats.minority_protected,
                            fraction,
                            seed,
                        );
                        let stats = compute_stats(&subsampled, attribute_index)?;
                        if stats.counts[0][pipe.stats.minority_protected as usize]
                            + stats.counts[1][pipe.stats.minority_protected as usize]
                            == 0
                        {
                            return Err(HarnessError::Config(format!(
                                "fraction {fraction} empties the minority cell"
                            )));
                        }
                        let train_cfg = cfg.train_baseline.to_train_config(
                            WeightMode::Uniform,
                            derive_seed(seed, streams::BASELINE_TRAIN),
                        );
                        let trained =
                            classify::train(&subsampled, attribute_index, &train_cfg, None)?;
                        let report =
                            evaluate_suite(&trained.classifier, &pipe.test, attribute_index)?;
                        fraction_rows.push((fraction, report.accuracy, report.acc_diff));
                    }
                    let mut method_rows = Vec::new();
                    for &method in methods {
                        let outcome = execute_method(cfg, &pipe, method)?;
                        method_rows.push((
                            method,
                            outcome.report.accuracy,
                            outcome.report.acc_diff,
                        ));
                    }
                    Ok(SeedSweep {
                        seed,
                        fraction_rows,
                        method_rows,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(HarnessError::Config("sweep job panicked".into())))
            })
            .collect()
    });

    let sweeps: Vec<SeedSweep> = results.into_iter().collect::<Result<_>>()?;

    let mut writer = ArtifactWriter::new(out_dir);
    let mut rows_per_method = Vec::new();
    for (m_idx, &method) in methods.iter().enumerate() {
        let mut rows = Vec::new();
        for sweep in &sweeps {
            for &(fraction, accuracy, acc_diff) in &sweep.fraction_rows {
                rows.push(SweepRow {
                    point: format!("{fraction}"),
                    fraction,
                    seed: sweep.seed,
                    accuracy,
                    acc_diff,
                });
            }
            let (_, accuracy, acc_diff) = sweep.method_rows[m_idx];
            rows.push(SweepRow {
                point: "1.0+aug".to_string(),
                fraction: 1.0,
                seed: sweep.seed,
                accuracy,
                acc_diff,
            });
        }
        writer.write(&format!("ablation_{}.csv", method.name()), &sweep_csv(&rows))?;
        rows_per_method.push((method, rows));
    }

    let mut artifacts = writer.written.clone();
    artifacts.push("manifest.json".to_string());
    artifacts.sort();
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        kind: "ablation".to_string(),
        config: cfg.clone(),
        seeds,
        artifacts,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    formats::write_string(&out_dir.join("manifest.json"), &text)?;

    Ok(AblationSummary {
        rows_per_method,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Text rendering of the contingency tables for every attribute.
pub fn render_stats(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let world_seed = cfg.world.seed;
    let world =
        WorldSpec::build(&cfg.world.to_world_config(derive_seed(world_seed, streams::WORLD)))?;
    let xr = sample_real_dataset(
        cfg.data.train_size,
        &cfg.bias.to_bias_spec(),
        &world,
        derive_seed(world_seed, streams::REAL_DATASET),
    )?;
    let mut out = String::new();
    out.push_str(&format!(
        "dataset: {} samples, world seed {world_seed}, biased attribute {}\n",
        xr.len(),
        cfg.bias.attribute_index
    ));
    for attr in 0..world.num_attributes() {
        let stats = compute_stats(&xr, attr)?;
        out.push_str(&format!("\nattribute {attr} vs protected\n"));
        out.push_str("           p=0       p=1\n");
        for a in 0..2 {
            out.push_str(&format!(
                "  a={a}  {:8}  {:8}\n",
                stats.counts[a][0], stats.counts[a][1]
            ));
        }
        out.push_str(&format!(
            "minority: p={} (tie: {}), deficits: a=0 -> {}, a=1 -> {}\n",
            stats.minority_protected as u8, stats.tie, stats.deficits[0], stats.deficits[1]
        ));
    }
    Ok(out)
}
