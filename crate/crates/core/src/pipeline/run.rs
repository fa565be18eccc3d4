use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{contextual_entropy_report, EntropyReport};
use crate::io::{read_layerstack_as, read_logits};
use crate::stats::{layerwise_correlation, layerwise_id_loss_correlation, CorrelationOptions, CorrelationReport};

use super::manifest::{Manifest, ManifestEntry};
use super::output::{csv_f64, safe_name, write_csv, write_json};
use super::profile::{cloud_ids, compute_profile, GeometryProfile, IdAtScale};
use super::summary::{delta, summarize_group, GroupDelta, GroupSummary};
use super::{OutputFormat, PipelineError, RunConfig, MIN_TOKENS, OUTPUT_SCHEMA_VERSION};

/// A prompt excluded from the run, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub prompt_id: String,
    pub shuffle_index: Option<u32>,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorsFile {
    pub schema_version: u32,
    pub errors: Vec<Quarantined>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyFile {
    pub schema_version: u32,
    pub prompt_id: String,
    pub shuffle_index: Option<u32>,
    pub n_tokens: usize,
    pub vocab_size: usize,
    pub report: EntropyReport,
    /// GRIDE estimates of the logit cloud.
    pub logits_id: Vec<IdAtScale>,
    pub logits_id_error: Option<String>,
}

/// Settings echoed into aggregate outputs. Paths are left out so that the
/// same inputs give the same bytes wherever they live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub metrics: super::MetricSet,
    pub scalings: Vec<usize>,
    pub ks: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema_version: u32,
    pub config: RunEcho,
    pub groups: Vec<GroupSummary>,
    pub quarantined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingEntry {
    pub shuffle_index: u32,
    /// `None` when no prompt has a dump at this level.
    pub prompt_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub schema_version: u32,
    pub config: RunEcho,
    pub baseline_shuffle_index: u32,
    pub requested: Vec<u32>,
    pub groups: Vec<GroupSummary>,
    /// Per-level mean minus the S = 0 mean; empty without a baseline.
    pub deltas: Vec<GroupDelta>,
    pub missing: Vec<MissingEntry>,
    pub quarantined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFile {
    pub schema_version: u32,
    pub config: RunEcho,
    pub options: CorrelationOptions,
    pub n_prompts: usize,
    pub prompt_ids: Vec<String>,
    /// One report per scaling.
    pub id_vs_loss: Vec<CorrelationReport>,
    /// One report per scaling; a single pseudo-layer.
    pub logits_id_vs_contextual_entropy: Vec<CorrelationReport>,
    pub contextual_entropy_vs_loss: CorrelationReport,
    pub quarantined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub quarantined: usize,
}

impl RunOutcome {
    /// 0 for a clean run, 1 when prompts were quarantined.
    pub fn exit_code(&self) -> i32 {
        if self.quarantined > 0 {
            1
        } else {
            0
        }
    }
}

struct PromptResult {
    profile: GeometryProfile,
    entropy: Option<EntropyFile>,
}

fn quarantine(entry: &ManifestEntry, stage: &str, message: impl ToString) -> Quarantined {
    Quarantined {
        prompt_id: entry.prompt_id.clone(),
        shuffle_index: entry.shuffle_index,
        stage: stage.into(),
        message: message.to_string(),
    }
}

fn process(manifest: &Manifest, entry: &ManifestEntry, config: &RunConfig) -> Result<PromptResult, Quarantined> {
    let stack = read_layerstack_as(manifest.resolve(&entry.layers), &entry.prompt_id)
        .map_err(|e| quarantine(entry, "read", e))?;
    if stack.n_tokens() < MIN_TOKENS {
        return Err(quarantine(
            entry,
            "validate",
            format!("{} tokens, need at least {MIN_TOKENS}", stack.n_tokens()),
        ));
    }
    if let Some(n) = entry.n_tokens {
        if n != stack.n_tokens() {
            return Err(quarantine(
                entry,
                "validate",
                format!("manifest says {n} tokens, dump has {}", stack.n_tokens()),
            ));
        }
    }
    let profile = compute_profile(
        &stack,
        entry.shuffle_index,
        &config.metrics,
        &config.scalings,
        &config.ks,
    )
    .map_err(|e| quarantine(entry, "profile", e))?;

    let entropy = match &entry.logits {
        None => None,
        Some(path) => {
            let rec = read_logits(manifest.resolve(path)).map_err(|e| quarantine(entry, "logits", e))?;
            if rec.n_tokens() != stack.n_tokens() {
                return Err(quarantine(
                    entry,
                    "logits",
                    format!(
                        "logits have {} tokens, layers have {}",
                        rec.n_tokens(),
                        stack.n_tokens()
                    ),
                ));
            }
            let report = contextual_entropy_report(&rec).map_err(|e| quarantine(entry, "entropy", e))?;
            let (logits_id, logits_id_error) = if config.metrics.id {
                match rec
                    .logit_cloud()
                    .map_err(|e| e.to_string())
                    .and_then(|c| cloud_ids(&c, &config.scalings))
                {
                    Ok(ids) => (ids, None),
                    Err(e) => (Vec::new(), Some(e)),
                }
            } else {
                (Vec::new(), None)
            };
            Some(EntropyFile {
                schema_version: OUTPUT_SCHEMA_VERSION,
                prompt_id: entry.prompt_id.clone(),
                shuffle_index: entry.shuffle_index,
                n_tokens: rec.n_tokens(),
                vocab_size: rec.vocab_size(),
                report,
                logits_id,
                logits_id_error,
            })
        }
    };
    Ok(PromptResult { profile, entropy })
}

fn output_stem(entry: &ManifestEntry) -> String {
    match entry.shuffle_index {
        Some(s) => format!("{}.s{s}", safe_name(&entry.prompt_id)),
        None => safe_name(&entry.prompt_id),
    }
}

fn check_output_names(entries: &[&ManifestEntry]) -> Result<(), PipelineError> {
    let mut seen = BTreeMap::new();
    for e in entries {
        if let Some(prev) = seen.insert(output_stem(e), &e.prompt_id) {
            return Err(PipelineError::Config(format!(
                "prompt ids {prev:?} and {:?} map to the same output file",
                e.prompt_id
            )));
        }
    }
    Ok(())
}

/// Processes entries in parallel; results come back in manifest order.
fn run_population(
    config: &RunConfig,
    manifest: &Manifest,
    entries: &[&ManifestEntry],
) -> Result<Vec<Result<PromptResult, Quarantined>>, PipelineError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(pool.install(|| entries.par_iter().map(|e| process(manifest, e, config)).collect()))
}

fn echo(config: &RunConfig) -> RunEcho {
    RunEcho {
        metrics: config.metrics,
        scalings: config.scalings.clone(),
        ks: config.ks.clone(),
        seed: config.seed,
    }
}

/// Writes profiles, entropy files and `errors.json`; returns the quarantine list.
fn write_prompt_outputs(
    out: &Path,
    entries: &[&ManifestEntry],
    results: &[Result<PromptResult, Quarantined>],
) -> Result<Vec<Quarantined>, PipelineError> {
    let mut errors = Vec::new();
    for (entry, r) in entries.iter().zip(results) {
        match r {
            Ok(r) => {
                let stem = output_stem(entry);
                write_json(&out.join("profiles").join(format!("{stem}.profile.json")), &r.profile)?;
                if let Some(ent) = &r.entropy {
                    write_json(&out.join("entropy").join(format!("{stem}.entropy.json")), ent)?;
                }
            }
            Err(q) => errors.push(q.clone()),
        }
    }
    write_json(
        &out.join("errors.json"),
        &ErrorsFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            errors: errors.clone(),
        },
    )?;
    Ok(errors)
}

fn quarantined_ids(errors: &[Quarantined]) -> Vec<String> {
    errors
        .iter()
        .map(|q| match q.shuffle_index {
            Some(s) => format!("{}@s{s}", q.prompt_id),
            None => q.prompt_id.clone(),
        })
        .collect()
}

/// Groups successful results by shuffle index, keeping manifest order within each group.
fn groups<'a>(
    entries: &[&ManifestEntry],
    results: &'a [Result<PromptResult, Quarantined>],
) -> BTreeMap<Option<u32>, Vec<&'a PromptResult>> {
    let mut g: BTreeMap<Option<u32>, Vec<&PromptResult>> = BTreeMap::new();
    for (entry, r) in entries.iter().zip(results) {
        if let Ok(r) = r {
            g.entry(entry.shuffle_index).or_default().push(r);
        }
    }
    g
}

fn summarize(shuffle_index: Option<u32>, members: &[&PromptResult]) -> GroupSummary {
    let pairs: Vec<_> = members
        .iter()
        .map(|r| (&r.profile, r.entropy.as_ref().map(|e| &e.report)))
        .collect();
    summarize_group(shuffle_index, &pairs)
}

fn shuffle_cell(s: Option<u32>) -> String {
    s.map(|s| s.to_string()).unwrap_or_default()
}

fn write_metric_csvs(
    dir: &Path,
    prefix: &str,
    groups: &[GroupSummary],
    deltas: Option<&[GroupDelta]>,
) -> Result<(), PipelineError> {
    let mut names = BTreeSet::new();
    for g in groups {
        for l in &g.layers {
            names.extend(l.metrics.keys().cloned());
        }
    }
    for name in names {
        let mut rows = Vec::new();
        for g in groups {
            let d = deltas.and_then(|ds| ds.iter().find(|d| Some(d.shuffle_index) == g.shuffle_index));
            for l in &g.layers {
                if let Some(st) = l.metrics.get(&name) {
                    let mut row = vec![
                        shuffle_cell(g.shuffle_index),
                        l.layer.to_string(),
                        csv_f64(Some(st.mean)),
                        csv_f64(Some(st.std)),
                        st.n.to_string(),
                    ];
                    if deltas.is_some() {
                        let dv = d
                            .and_then(|d| d.layers.iter().find(|x| x.layer == l.layer))
                            .and_then(|x| x.metrics.get(&name).copied());
                        row.push(csv_f64(dv));
                    }
                    rows.push(row);
                }
            }
        }
        let mut header = vec!["shuffle_index", "layer", "mean", "std", "n"];
        if deltas.is_some() {
            header.push("delta_vs_s0");
        }
        write_csv(&dir.join(format!("{prefix}{name}.csv")), &header, &rows)?;
    }

    let mut rows = Vec::new();
    for g in groups {
        for (name, st) in &g.entropy {
            rows.push(vec![
                shuffle_cell(g.shuffle_index),
                name.clone(),
                csv_f64(Some(st.mean)),
                csv_f64(Some(st.std)),
                st.n.to_string(),
            ]);
        }
    }
    if !rows.is_empty() {
        write_csv(
            &dir.join(format!("{prefix}entropy.csv")),
            &["shuffle_index", "metric", "mean", "std", "n"],
            &rows,
        )?;
    }
    Ok(())
}

fn load(config: &RunConfig) -> Result<Manifest, PipelineError> {
    config.validate()?;
    let manifest = Manifest::load(&config.manifest)?;
    if manifest.prompts.is_empty() {
        return Err(PipelineError::Manifest("no prompts listed".into()));
    }
    Ok(manifest)
}

/// Profiles every manifest entry and writes `profiles/`, `entropy/`,
/// `summary.json` and `errors.json` under the output directory.
pub fn analyze(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let manifest = load(config)?;
    let entries: Vec<&ManifestEntry> = manifest.prompts.iter().collect();
    check_output_names(&entries)?;
    let results = run_population(config, &manifest, &entries)?;
    let out = &config.out_dir;
    let errors = write_prompt_outputs(out, &entries, &results)?;

    let groups: Vec<GroupSummary> = groups(&entries, &results)
        .into_iter()
        .map(|(s, members)| summarize(s, &members))
        .collect();
    if config.format == OutputFormat::Csv {
        write_metric_csvs(&out.join("csv"), "", &groups, None)?;
    }
    write_json(
        &out.join("summary.json"),
        &SummaryFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            config: echo(config),
            groups,
            quarantined: quarantined_ids(&errors),
        },
    )?;
    Ok(RunOutcome {
        quarantined: errors.len(),
    })
}

/// Profiles labeled dumps, summarizes each shuffle level and reports its
/// difference from S = 0. Writes `comparison.json`.
pub fn compare_shuffles(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let manifest = load(config)?;
    if let Some(e) = manifest.prompts.iter().find(|e| e.shuffle_index.is_none()) {
        return Err(PipelineError::MissingShuffleLabel(e.prompt_id.clone()));
    }
    let present: BTreeSet<u32> = manifest.prompts.iter().filter_map(|e| e.shuffle_index).collect();
    let requested: Vec<u32> = if config.shuffles.is_empty() {
        present.iter().copied().collect()
    } else {
        config
            .shuffles
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    };
    let mut levels: BTreeSet<u32> = requested.iter().copied().collect();
    levels.insert(0);

    let entries: Vec<&ManifestEntry> = manifest
        .prompts
        .iter()
        .filter(|e| e.shuffle_index.is_some_and(|s| levels.contains(&s)))
        .collect();
    check_output_names(&entries)?;
    let results = run_population(config, &manifest, &entries)?;
    let out = &config.out_dir;
    let errors = write_prompt_outputs(out, &entries, &results)?;

    let grouped = groups(&entries, &results);
    let summaries: Vec<GroupSummary> = grouped.iter().map(|(s, m)| summarize(*s, m)).collect();
    let baseline = summaries.iter().find(|g| g.shuffle_index == Some(0));
    let deltas: Vec<GroupDelta> = match baseline {
        Some(base) => summaries
            .iter()
            .map(|g| GroupDelta {
                shuffle_index: g.shuffle_index.unwrap_or(0),
                layers: delta(g, base),
            })
            .collect(),
        None => Vec::new(),
    };

    let mut prompt_order: Vec<&str> = Vec::new();
    for e in &entries {
        if !prompt_order.contains(&e.prompt_id.as_str()) {
            prompt_order.push(&e.prompt_id);
        }
    }
    let mut missing = Vec::new();
    for &s in &levels {
        if !present.contains(&s) {
            missing.push(MissingEntry {
                shuffle_index: s,
                prompt_id: None,
                reason: "no dump at this shuffle level".into(),
            });
            continue;
        }
        for id in &prompt_order {
            let has_dump = entries.iter().any(|e| e.prompt_id == *id && e.shuffle_index == Some(s));
            let failed = errors.iter().any(|q| q.prompt_id == *id && q.shuffle_index == Some(s));
            if !has_dump {
                missing.push(MissingEntry {
                    shuffle_index: s,
                    prompt_id: Some(id.to_string()),
                    reason: "no dump for this prompt".into(),
                });
            } else if failed {
                missing.push(MissingEntry {
                    shuffle_index: s,
                    prompt_id: Some(id.to_string()),
                    reason: "quarantined".into(),
                });
            }
        }
    }

    if config.format == OutputFormat::Csv {
        write_metric_csvs(&out.join("csv"), "compare_", &summaries, Some(&deltas))?;
    }
    write_json(
        &out.join("comparison.json"),
        &ComparisonFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            config: echo(config),
            baseline_shuffle_index: 0,
            requested,
            groups: summaries,
            deltas,
            missing,
            quarantined: quarantined_ids(&errors),
        },
    )?;
    Ok(RunOutcome {
        quarantined: errors.len(),
    })
}

/// Smallest population the correlations are computed on.
pub const MIN_POPULATION: usize = 3;

fn transform_id(d: Option<f64>, log_id: bool) -> Option<f64> {
    d.filter(|d| *d > 0.0).map(|d| if log_id { d.ln() } else { d })
}

fn write_correlation_csv(dir: &Path, report: &CorrelationReport) -> Result<(), PipelineError> {
    let rows: Vec<Vec<String>> = report
        .per_layer
        .iter()
        .map(|l| {
            vec![
                l.layer.to_string(),
                l.n.to_string(),
                csv_f64(l.pearson),
                csv_f64(l.p_pearson),
                csv_f64(l.spearman),
                csv_f64(l.p_spearman),
                csv_f64(l.p_permutation),
                csv_f64(l.pearson_bootstrap_std),
                l.significant.to_string(),
            ]
        })
        .collect();
    let path: PathBuf = dir.join(format!("correlation_{}_vs_{}.csv", report.x, report.y));
    write_csv(
        &path,
        &[
            "layer",
            "n",
            "pearson",
            "p_pearson",
            "spearman",
            "p_spearman",
            "p_permutation",
            "pearson_bootstrap_std",
            "significant",
        ],
        &rows,
    )?;
    Ok(())
}

/// Correlates per-layer ID with the average cross-entropy loss over the
/// structured prompts that have logits, plus the logit-cloud ID with the
/// contextual entropy. Writes `correlation.json`.
pub fn correlate(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let manifest = load(config)?;
    let mut config = config.clone();
    config.metrics.id = true;

    let entries: Vec<&ManifestEntry> = manifest
        .prompts
        .iter()
        .filter(|e| e.logits.is_some() && matches!(e.shuffle_index, None | Some(0)))
        .collect();
    if entries.len() < MIN_POPULATION {
        return Err(PipelineError::InsufficientPopulation {
            needed: MIN_POPULATION,
            have: entries.len(),
        });
    }
    check_output_names(&entries)?;
    let results = run_population(&config, &manifest, &entries)?;
    let out = &config.out_dir;
    let errors = write_prompt_outputs(out, &entries, &results)?;

    let population: Vec<(GeometryProfile, EntropyFile)> = results
        .into_iter()
        .filter_map(|r| r.ok())
        .filter_map(|r| r.entropy.map(|e| (r.profile, e)))
        .collect();
    if population.len() < MIN_POPULATION {
        return Err(PipelineError::InsufficientPopulation {
            needed: MIN_POPULATION,
            have: population.len(),
        });
    }

    let base = CorrelationOptions {
        scaling: config.scalings[0],
        log_id: config.log_id,
        permutations: config.permutations,
        bootstrap: CorrelationOptions::default().bootstrap,
        seed: config.seed,
    };
    let pairs: Vec<(GeometryProfile, EntropyReport)> =
        population.iter().map(|(p, e)| (p.clone(), e.report.clone())).collect();
    let prefix = if config.log_id { "log_" } else { "" };

    let mut id_vs_loss = Vec::new();
    let mut logits_vs_ctx = Vec::new();
    for &s in &config.scalings {
        let opts = CorrelationOptions { scaling: s, ..base };
        id_vs_loss.push(layerwise_id_loss_correlation(&pairs, &opts));
        let samples: Vec<(Vec<Option<f64>>, f64)> = population
            .iter()
            .map(|(_, e)| {
                let d = e.logits_id.iter().find(|x| x.n2 == s).and_then(|x| x.d_hat);
                (vec![transform_id(d, config.log_id)], e.report.avg_contextual_entropy)
            })
            .collect();
        logits_vs_ctx.push(layerwise_correlation(
            &format!("{prefix}logits_id_s{s}"),
            "avg_contextual_entropy",
            &samples,
            &opts,
        ));
    }
    let ctx_samples: Vec<(Vec<Option<f64>>, f64)> = population
        .iter()
        .map(|(_, e)| (vec![Some(e.report.avg_contextual_entropy)], e.report.avg_cross_entropy))
        .collect();
    let ctx_vs_loss = layerwise_correlation("avg_contextual_entropy", "avg_cross_entropy", &ctx_samples, &base);

    if config.format == OutputFormat::Csv {
        let dir = out.join("csv");
        for r in id_vs_loss
            .iter()
            .chain(&logits_vs_ctx)
            .chain(std::iter::once(&ctx_vs_loss))
        {
            write_correlation_csv(&dir, r)?;
        }
    }
    write_json(
        &out.join("correlation.json"),
        &CorrelationFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            config: echo(&config),
            options: base,
            n_prompts: population.len(),
            prompt_ids: population.iter().map(|(p, _)| p.prompt_id.clone()).collect(),
            id_vs_loss,
            logits_id_vs_contextual_entropy: logits_vs_ctx,
            contextual_entropy_vs_loss: ctx_vs_loss,
            quarantined: quarantined_ids(&errors),
        },
    )?;
    Ok(RunOutcome {
        quarantined: errors.len(),
    })
}
