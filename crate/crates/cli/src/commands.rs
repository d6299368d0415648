//! Subcommand implementations. Each reads every input before writing any
//! artifact, so a refused run leaves the workspace untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use sigtrack::blacklist::{family_histogram, serial_stats};
use sigtrack::classifier::{group_accuracy, GroupAccuracy};
use sigtrack::detector::VerdictRecord;
use sigtrack::evalkit::{
    gen_synthetic_corpus, parse_labels, run_cv, ConfusionMatrix, CvParams, LabeledCorpus,
    SynthMode, SynthSpec,
};
use sigtrack::ingest::{load_profile, parse_apk, to_profile_document};
use sigtrack::{
    build_blacklist, classify_stream, detect_batch, train, Decision, DetectorParams, FeatureConfig,
    GroupSet, Label, LikelihoodModel, RawPackage, SerialBlacklist, Weights,
};

use crate::workspace::*;
use crate::{
    ClassifyArgs, Cli, CliError, Command, CorpusMode, DetectArgs, Order, EXIT_OK, EXIT_PARTIAL,
};

pub fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    let ws = Workspace::new(&cli.workspace);
    let cfg_path = cli.config.as_deref();
    match &cli.command {
        Command::Extract { inputs, labels } => {
            cmd_extract(&ws, cfg_path, inputs, labels.as_deref())
        }
        Command::Train => cmd_train(&ws, cfg_path),
        Command::Blacklist { built_at } => cmd_blacklist(&ws, cfg_path, *built_at),
        Command::Scan(args) => cmd_scan(&ws, cfg_path, args),
        Command::Classify { classify, order } => cmd_classify(&ws, cfg_path, classify, *order),
        Command::Eval {
            detect,
            classify,
            folds,
            seed,
        } => cmd_eval(&ws, cfg_path, detect, classify, *folds, *seed),
        Command::GenCorpus {
            out,
            families,
            per_family,
            benign,
            mode,
            seed,
        } => {
            let spec = SynthSpec {
                n_families: *families,
                samples_per_family: *per_family,
                n_benign: *benign,
                mode: match mode {
                    CorpusMode::Separable => SynthMode::Separable,
                    CorpusMode::Table2 => SynthMode::Table2,
                },
                ..SynthSpec::default()
            };
            cmd_gen_corpus(&ws, cfg_path, out, &spec, *seed)
        }
        Command::Stats => cmd_stats(&ws, cfg_path),
    }
}

fn detector_params(args: &DetectArgs) -> Result<DetectorParams, CliError> {
    let params = DetectorParams {
        threshold_likelihood: args.threshold_tl,
        sensitive_threshold: args.sensitive_threshold,
        short_circuit: !args.no_short_circuit,
        ..DetectorParams::default()
    };
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(params)
}

fn threshold_ts(args: &ClassifyArgs) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&args.threshold_ts) {
        Ok(args.threshold_ts)
    } else {
        Err(CliError::Usage(format!(
            "--threshold-TS must lie in [0, 1] (got {})",
            args.threshold_ts
        )))
    }
}

const CORPUS_SIDE_FILES: [&str; 2] = ["labels.tsv", "truth.json"];

/// Files to extract under `path`, in name order for directories.
fn expand_input(path: &Path) -> Result<(Vec<PathBuf>, Option<PathBuf>), CliError> {
    if !path.is_dir() {
        return Ok((vec![path.to_path_buf()], None));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).map_err(io_err(path))? {
        let p = entry.map_err(io_err(path))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if p.is_file() && matches!(ext, "apk" | "json") && !CORPUS_SIDE_FILES.contains(&name) {
            files.push(p);
        }
    }
    files.sort();
    let labels = path.join("labels.tsv");
    Ok((files, labels.is_file().then_some(labels)))
}

fn parse_input(bytes: &[u8]) -> Result<RawPackage, String> {
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
    if first == Some(&b'{') {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| format!("profile document is not UTF-8: {e}"))?;
        load_profile(text).map_err(|e| e.to_string())
    } else {
        parse_apk(bytes).map_err(|e| e.to_string())
    }
}

fn merge_labels_file(path: &Path, into: &mut BTreeMap<String, Label>) -> Result<(), CliError> {
    let text = read_text(path)?;
    let parsed = parse_labels(&text).map_err(|e| CliError::Version {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    into.extend(parsed);
    Ok(())
}

pub fn cmd_extract(
    ws: &Workspace,
    cfg_path: Option<&Path>,
    inputs: &[PathBuf],
    labels_path: Option<&Path>,
) -> Result<u8, CliError> {
    if inputs.is_empty() && labels_path.is_none() {
        return Ok(EXIT_OK);
    }
    let _lock = ws.lock()?;
    let cfg = ws.resolve_config(cfg_path)?;
    let mut index = ws.read_index()?;
    let mut known: BTreeSet<String> = index.iter().cloned().collect();
    let mut labels = ws.read_labels()?;

    let mut files = Vec::new();
    for input in inputs {
        let (found, dir_labels) = expand_input(input)?;
        files.extend(found);
        if let Some(l) = dir_labels {
            merge_labels_file(&l, &mut labels)?;
        }
    }
    if let Some(l) = labels_path {
        merge_labels_file(l, &mut labels)?;
    }
    ws.store_config(&cfg)?;

    let mut failures = 0usize;
    for file in &files {
        let parsed = fs::read(file)
            .map_err(|e| e.to_string())
            .and_then(|bytes| parse_input(&bytes));
        match parsed {
            Ok(raw) => {
                write_atomic(
                    &ws.profile_path(&raw.sha256),
                    to_profile_document(&raw).as_bytes(),
                )?;
                if known.insert(raw.sha256.clone()) {
                    index.push(raw.sha256.clone());
                }
                println!("ok {} {}", raw.sha256, file.display());
            }
            Err(e) => {
                failures += 1;
                println!("error {}: {e}", file.display());
            }
        }
    }
    ws.write_index(&index)?;
    ws.write_labels(&labels)?;
    println!(
        "extracted {} of {} inputs",
        files.len() - failures,
        files.len()
    );
    Ok(if !files.is_empty() && failures == files.len() {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    })
}

pub fn cmd_train(ws: &Workspace, cfg_path: Option<&Path>) -> Result<u8, CliError> {
    let _lock = ws.lock()?;
    let cfg = ws.resolve_config(cfg_path)?;
    let (profiles, unlabeled) = ws.load_labeled(&cfg)?;
    let model = train(&profiles, &cfg).map_err(|e| CliError::Failed(e.to_string()))?;
    ws.store_config(&cfg)?;
    write_atomic(&ws.path(MODEL_FILE), model.to_json().as_bytes())?;
    println!(
        "trained on {} benign and {} malicious profiles ({} unlabeled skipped)",
        model.requested.n_benign, model.requested.n_malicious, unlabeled
    );
    Ok(EXIT_OK)
}

pub fn cmd_blacklist(
    ws: &Workspace,
    cfg_path: Option<&Path>,
    built_at: Option<u64>,
) -> Result<u8, CliError> {
    let _lock = ws.lock()?;
    let cfg = ws.resolve_config(cfg_path)?;
    let (profiles, _) = ws.load_labeled(&cfg)?;
    let malware: Vec<_> = profiles
        .into_iter()
        .filter(|p| p.label.as_ref().is_some_and(Label::is_malicious))
        .collect();
    let built_at = match built_at {
        Some(t) => Some(t),
        None => match std::env::var("SOURCE_DATE_EPOCH") {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                CliError::Usage(format!("SOURCE_DATE_EPOCH is not an integer: {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    let bl = build_blacklist(&malware, &cfg)
        .map_err(|e| CliError::Failed(e.to_string()))?
        .with_built_at(built_at);
    ws.store_config(&cfg)?;
    write_atomic(&ws.path(BLACKLIST_FILE), bl.to_text().as_bytes())?;
    println!(
        "blacklisted {} serials from {} malware profiles ({} test keys excluded)",
        bl.len(),
        malware.len(),
        bl.excluded_test_keys.len()
    );
    Ok(EXIT_OK)
}

fn load_model(ws: &Workspace, cfg: &FeatureConfig) -> Result<LikelihoodModel, CliError> {
    let path = ws.path(MODEL_FILE);
    let model = LikelihoodModel::from_json(&read_text(&path)?).map_err(|e| CliError::Version {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if model.cfg_fingerprint != cfg.fingerprint() {
        return Err(CliError::Version {
            path,
            reason: "model was trained with a different feature config; re-run train".into(),
        });
    }
    Ok(model)
}

fn load_blacklist(ws: &Workspace) -> Result<SerialBlacklist, CliError> {
    let path = ws.path(BLACKLIST_FILE);
    SerialBlacklist::from_text(&read_text(&path)?).map_err(|e| CliError::Version {
        path,
        reason: e.to_string(),
    })
}

pub fn cmd_scan(
    ws: &Workspace,
    cfg_path: Option<&Path>,
    args: &DetectArgs,
) -> Result<u8, CliError> {
    let params = detector_params(args)?;
    let _lock = ws.lock()?;
    let cfg = ws.resolve_config(cfg_path)?;
    let model = load_model(ws, &cfg)?;
    let bl = load_blacklist(ws)?;
    let index = ws.read_index()?;

    let mut failures = 0usize;
    let mut profiles = Vec::with_capacity(index.len());
    for sha in &index {
        match ws.load_profile(sha, &cfg) {
            Ok(p) => profiles.push(p),
            Err(e) => {
                failures += 1;
                println!("error {sha}: {e}");
            }
        }
    }

    let labels = ws.read_labels()?;
    let mut confusion = ConfusionMatrix::default();
    let mut all_labeled = !profiles.is_empty();
    let mut malicious = 0usize;
    let mut lines = String::new();
    for (sha, verdict) in detect_batch(&profiles, &bl, &model, &params) {
        match verdict {
            Ok(v) => {
                if v.is_malicious() {
                    malicious += 1;
                }
                match labels.get(&sha) {
                    Some(l) => confusion.record(l.is_malicious(), v.is_malicious()),
                    None => all_labeled = false,
                }
                lines.push_str(&VerdictRecord::new(&sha, &v).to_line());
                lines.push('\n');
            }
            Err(e) => {
                failures += 1;
                println!("error {sha}: {e}");
            }
        }
    }
    write_atomic(&ws.path(VERDICTS_FILE), lines.as_bytes())?;
    let scanned = index.len() - failures;
    println!(
        "scanned {scanned} profiles: {malicious} malicious, {} benign",
        scanned - malicious
    );
    if all_labeled {
        print!("{}", confusion.render());
        println!("accuracy {:.4}", confusion.accuracy());
    }
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn read_verdicts(ws: &Workspace) -> Result<Vec<VerdictRecord>, CliError> {
    let path = ws.path(VERDICTS_FILE);
    let text = read_text(&path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Version {
                path: path.clone(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn weights_or_default(args: &ClassifyArgs) -> Weights {
    args.weights.unwrap_or_default()
}

fn render_accuracy(acc: &GroupAccuracy) -> String {
    format!("{}\n{}", acc.render_groups(), acc.render_families())
}

pub fn cmd_classify(
    ws: &Workspace,
    cfg_path: Option<&Path>,
    args: &ClassifyArgs,
    order: Order,
) -> Result<u8, CliError> {
    let t_s = threshold_ts(args)?;
    let _lock = ws.lock()?;
    let cfg = ws.resolve_config(cfg_path)?;
    let mut flagged: Vec<String> = read_verdicts(ws)?
        .into_iter()
        .filter(|v| v.decision == Decision::Malicious)
        .map(|v| v.sha256)
        .collect();
    if order == Order::Sha256 {
        flagged.sort();
    }
    let profiles = flagged
        .iter()
        .map(|sha| ws.load_profile(sha, &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let gs: GroupSet = classify_stream(&profiles, &cfg, t_s, weights_or_default(args))
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let labels = ws.read_labels()?;
    let categories: BTreeMap<String, String> = flagged
        .iter()
        .filter_map(|s| labels.get(s).map(|l| (s.clone(), l.category().to_string())))
        .collect();
    let report = (categories.len() == flagged.len() && !flagged.is_empty())
        .then(|| group_accuracy(&gs, &categories))
        .transpose()
        .map_err(|e| CliError::Failed(e.to_string()))?;

    write_atomic(&ws.path(GROUPS_FILE), gs.to_json().as_bytes())?;
    println!("{} samples in {} groups", flagged.len(), gs.groups.len());
    if let Some(acc) = report {
        let text = render_accuracy(&acc);
        write_atomic(&ws.path(GROUPS_REPORT_FILE), text.as_bytes())?;
        print!("{text}");
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(
    ws: &Workspace,
    cfg_path: Option<&Path>,
    detect: &DetectArgs,
    classify: &ClassifyArgs,
    folds: usize,
    seed: u64,
) -> Result<u8, CliError> {
    let params = CvParams {
        detector: detector_params(detect)?,
        t_s: threshold_ts(classify)?,
        weights: weights_or_default(classify),
        parallel: true,
    };
    let _lock = ws.lock()?;
    let cfg = ws.resolve_config(cfg_path)?;
    let labels = ws.read_labels()?;
    let mut pairs = Vec::new();
    for p in ws.load_all(&cfg)? {
        let label = labels.get(&p.sha256).cloned().ok_or_else(|| {
            CliError::Usage(format!(
                "profile {} has no label; eval needs a fully labeled corpus",
                p.sha256
            ))
        })?;
        pairs.push((p, label));
    }
    let corpus = LabeledCorpus::new(pairs).map_err(|e| CliError::Failed(e.to_string()))?;
    let report = run_cv(&corpus, &cfg, &params, folds, seed).map_err(|e| match e {
        sigtrack::evalkit::EvalError::CorpusTooSmall { .. }
        | sigtrack::evalkit::EvalError::BadFoldCount(_) => CliError::Usage(e.to_string()),
        other => CliError::Failed(other.to_string()),
    })?;
    let text = report.render();
    write_atomic(&ws.path(CV_REPORT_FILE), report.to_json().as_bytes())?;
    write_atomic(&ws.path(CV_TEXT_FILE), text.as_bytes())?;
    print!("{text}");
    Ok(EXIT_OK)
}

pub fn cmd_gen_corpus(
    ws: &Workspace,
    cfg_path: Option<&Path>,
    out: &Path,
    spec: &SynthSpec,
    seed: u64,
) -> Result<u8, CliError> {
    let cfg = ws.resolve_config(cfg_path)?;
    let corpus =
        gen_synthetic_corpus(spec, &cfg, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    corpus
        .write_dir(out)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let malicious = corpus
        .samples
        .iter()
        .filter(|s| s.label.is_malicious())
        .count();
    println!(
        "wrote {} profiles ({} malicious, {} benign) to {}",
        corpus.samples.len(),
        malicious,
        corpus.samples.len() - malicious,
        out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_stats(ws: &Workspace, cfg_path: Option<&Path>) -> Result<u8, CliError> {
    let cfg = ws.resolve_config(cfg_path)?;
    let (profiles, _) = ws.load_labeled(&cfg)?;
    let malware: Vec<_> = profiles
        .into_iter()
        .filter(|p| p.label.as_ref().is_some_and(Label::is_malicious))
        .collect();
    let stats = serial_stats(&malware).map_err(|e| CliError::Failed(e.to_string()))?;
    let hist = family_histogram(&malware, &cfg.test_key_serials)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    println!("malware profiles     {}", stats.profiles);
    println!("distinct serials     {}", stats.distinct_serials);
    println!("apps per serial      {:.2}", stats.mean_apps_per_serial);
    println!();
    println!("Families  Serials (test keys excluded)");
    for (families, serials) in &hist {
        println!("{families:>8}  {serials:>7}");
    }
    Ok(EXIT_OK)
}
