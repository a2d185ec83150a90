use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use kwass::clustering::{ContingencyTable, Dendrogram};
use kwass::distances::{distance_matrix_with_workers, format_f64};
use kwass::synth::{generate, SynthConfig};
use kwass::texture::{self, FeatureVector, GrayImage, FEATURE_NAMES};
use kwass::{DistanceMatrix, DivergenceOptions, Kernel, SampleSet};
use serde::Serialize;

use crate::io::{csv_line, read_id_pairs, read_records, read_text, strip_numeric_header, write_output};
use crate::{
    CliError, CliResult, ClusterArgs, DistmatArgs, EvalArgs, FeaturesArgs, Format, KernelFamily, SynthArgs,
};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "csv", "txt", "tsv"];

fn image_paths(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.is_file()
                        && f.extension()
                            .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_string_lossy().to_ascii_lowercase().as_str()))
                })
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn features(args: &FeaturesArgs) -> CliResult<()> {
    if !(0.0..=100.0).contains(&args.percentile) {
        return Err(CliError::Usage(format!("--percentile must lie in [0, 100], got {}", args.percentile)));
    }
    if args.levels < 2 {
        return Err(CliError::Usage(format!("--levels must be at least 2, got {}", args.levels)));
    }
    let mut rows: BTreeMap<String, FeatureVector> = BTreeMap::new();
    let paths = image_paths(&args.inputs)?;
    for path in &paths {
        let result = GrayImage::load(path).and_then(|img| {
            texture::image_features(&img, args.percentile, args.levels).map(|f| (img.id().to_string(), f))
        });
        match result {
            Ok((id, f)) => {
                if rows.insert(id.clone(), f).is_some() {
                    return Err(CliError::Input(format!("duplicate image id '{id}'")));
                }
            }
            Err(e) => eprintln!("kwass: skipping {}: {e}", path.display()),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("none of {} input image(s) produced features", paths.len())));
    }
    let ids: Vec<String> = rows.keys().cloned().collect();
    let vectors: Vec<FeatureVector> = rows.into_values().collect();
    let vectors = if args.raw { vectors } else { texture::normalize_corpus(&vectors) };

    let mut out = csv_line(&std::iter::once("id").chain(FEATURE_NAMES).collect::<Vec<_>>());
    for (id, f) in ids.iter().zip(&vectors) {
        let mut fields = vec![id.clone()];
        fields.extend(f.values.iter().map(|&v| format_f64(v)));
        out.push_str(&csv_line(&fields));
    }
    write_output(args.out.as_deref(), &out)
}

fn kernel_from_args(args: &DistmatArgs) -> CliResult<Kernel> {
    let any_kernel_flag = args.kernel.is_some() || args.gamma.is_some() || args.degree.is_some() || args.offset.is_some();
    if !args.metric.uses_kernel() {
        if any_kernel_flag {
            return Err(CliError::Usage(format!("metric {} does not take kernel options", args.metric)));
        }
        return Ok(Kernel::default());
    }
    let family = args.kernel.unwrap_or(if args.degree.is_some() || args.offset.is_some() {
        KernelFamily::Polynomial
    } else {
        KernelFamily::Rbf
    });
    let misplaced = match family {
        KernelFamily::Rbf => args.degree.is_some() || args.offset.is_some(),
        KernelFamily::Polynomial => args.gamma.is_some(),
        KernelFamily::Linear => args.gamma.is_some() || args.degree.is_some() || args.offset.is_some(),
    };
    if misplaced {
        return Err(CliError::Usage(format!("kernel options do not match the {family:?} kernel").to_lowercase()));
    }
    let kernel = match family {
        KernelFamily::Rbf => Kernel::rbf(args.gamma.unwrap_or(1.0)),
        KernelFamily::Polynomial => Kernel::polynomial(args.degree.unwrap_or(2), args.offset.unwrap_or(1.0)),
        KernelFamily::Linear => Ok(Kernel::Linear),
    };
    kernel.map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_numbers(fields: &[String], line: usize, path: &Path) -> CliResult<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| CliError::Input(format!("{}: record {line}: '{f}' is not a number", path.display())))
        })
        .collect()
}

/// Reads sample sets from a CSV whose first column is the set id.
pub(crate) fn read_sample_sets(path: &Path, columns_as_samples: bool) -> CliResult<Vec<SampleSet>> {
    let records = strip_numeric_header(read_records(path)?);
    if columns_as_samples {
        let mut seen = HashSet::new();
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let id = &r[0];
                if !seen.insert(id.clone()) {
                    return Err(CliError::Input(format!("duplicate set id '{id}'")));
                }
                let values = parse_numbers(&r[1..], i + 1, path)?;
                SampleSet::from_scalars(id.clone(), &values).map_err(|e| CliError::Input(format!("set '{id}': {e}")))
            })
            .collect()
    } else {
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<Vec<f64>>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            let values = parse_numbers(&r[1..], i + 1, path)?;
            let rows = groups.entry(r[0].clone()).or_insert_with(|| {
                order.push(r[0].clone());
                Vec::new()
            });
            rows.push(values);
        }
        order
            .into_iter()
            .map(|id| {
                SampleSet::from_rows(id.clone(), &groups[&id]).map_err(|e| CliError::Input(format!("set '{id}': {e}")))
            })
            .collect()
    }
}

pub fn distmat(args: &DistmatArgs) -> CliResult<()> {
    let kernel = kernel_from_args(args)?;
    if !args.squared && !args.metric.is_squared_distance() {
        return Err(CliError::Usage(format!("--squared false only applies to w2 metrics, not {}", args.metric)));
    }
    if !(args.rho > 0.0 && args.rho.is_finite()) {
        return Err(CliError::Usage(format!("--rho must be positive, got {}", args.rho)));
    }
    let opts = DivergenceOptions { kernel, rho: args.rho, report_squared: args.squared };
    let sets = read_sample_sets(&args.input, args.columns_as_samples)?;
    if sets.len() < 2 {
        return Err(CliError::Input(format!("{}: need at least two sample sets", args.input.display())));
    }
    let d = distance_matrix_with_workers(&sets, args.metric, &opts, args.workers.unwrap_or(0))?;
    let format = args.format.unwrap_or_else(|| match &args.out {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => Format::Json,
        _ => Format::Csv,
    });
    let text = match format {
        Format::Csv => d.to_csv(),
        Format::Json => d.to_json() + "\n",
    };
    write_output(args.out.as_deref(), &text)
}

pub(crate) fn read_distance_matrix(path: &Path) -> CliResult<DistanceMatrix> {
    let text = read_text(path)?;
    let parsed = if text.trim_start().starts_with('{') {
        DistanceMatrix::from_json(&text)
    } else {
        DistanceMatrix::from_csv(&text)
    };
    parsed.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct DendrogramDoc<'a> {
    labels: &'a [String],
    #[serde(flatten)]
    tree: &'a Dendrogram,
}

fn group_name(a: usize, b: usize) -> String {
    if a == b {
        format!("within_{a}")
    } else {
        format!("between_{}_{}", a.min(b), a.max(b))
    }
}

pub fn cluster(args: &ClusterArgs) -> CliResult<()> {
    let d = read_distance_matrix(&args.input)?;
    let n = d.len();
    if args.k == 0 || args.k > n {
        return Err(CliError::Usage(format!("--k must lie in 1..={n}, got {}", args.k)));
    }
    if n < 2 {
        return Err(CliError::Input("clustering needs at least two items".into()));
    }
    let other = match (&args.emit_scatter_csv, &args.compare) {
        (Some(_), Some(p)) => {
            let o = read_distance_matrix(p)?;
            if o.labels != d.labels {
                return Err(CliError::Input(format!("{}: ids differ from {}", p.display(), args.input.display())));
            }
            Some(o)
        }
        _ => None,
    };
    let tree = kwass::agglomerate(&d, args.linkage)?;
    let labels = kwass::cut(&tree, args.k)?;

    let mut out = csv_line(&["id", "label"]);
    for (id, l) in d.labels.iter().zip(&labels) {
        out.push_str(&csv_line(&[id.as_str(), &l.to_string()]));
    }
    write_output(Some(&args.labels_out), &out)?;

    if let Some(p) = &args.dendrogram_out {
        let doc = DendrogramDoc { labels: &d.labels, tree: &tree };
        let json = serde_json::to_string_pretty(&doc).expect("dendrogram serializes");
        write_output(Some(p), &(json + "\n"))?;
    }
    if let Some(p) = &args.emit_heatmap_csv {
        let order = tree.leaf_order();
        let mut out = csv_line(&["row", "col", "row_id", "col_id", "row_cluster", "col_cluster", "value"]);
        for (r, &i) in order.iter().enumerate() {
            for (c, &j) in order.iter().enumerate() {
                out.push_str(&csv_line(&[
                    r.to_string(),
                    c.to_string(),
                    d.labels[i].clone(),
                    d.labels[j].clone(),
                    labels[i].to_string(),
                    labels[j].to_string(),
                    format_f64(d.get(i, j)),
                ]));
            }
        }
        write_output(Some(p), &out)?;
    }
    if let (Some(p), Some(o)) = (&args.emit_scatter_csv, &other) {
        let mut out = csv_line(&["id_i", "id_j", "group", "this", "other"]);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push_str(&csv_line(&[
                    d.labels[i].clone(),
                    d.labels[j].clone(),
                    group_name(labels[i], labels[j]),
                    format_f64(d.get(i, j)),
                    format_f64(o.get(i, j)),
                ]));
            }
        }
        write_output(Some(p), &out)?;
    }
    Ok(())
}

/// Evaluation summary. Rates are present only for a 2×2 table containing
/// the positive class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub contingency: ContingencyTable,
    pub chi_square: f64,
    pub noisy_cluster: Option<String>,
    pub noisy_rate: Option<f64>,
    pub clean_rate: Option<f64>,
    pub overall: Option<f64>,
}

pub fn evaluate(labels: &[(String, String)], truth: &[(String, String)], noisy_class: &str) -> CliResult<EvalReport> {
    let truth_map: HashMap<&str, &str> = truth.iter().map(|(i, c)| (i.as_str(), c.as_str())).collect();
    if truth_map.len() != truth.len() {
        return Err(CliError::Input("truth file repeats an id".into()));
    }
    let mut seen = HashSet::new();
    let mut clusters = Vec::with_capacity(labels.len());
    let mut classes = Vec::with_capacity(labels.len());
    for (id, label) in labels {
        if !seen.insert(id.as_str()) {
            return Err(CliError::Input(format!("labels file repeats id '{id}'")));
        }
        let class = truth_map
            .get(id.as_str())
            .ok_or_else(|| CliError::Input(format!("id '{id}' has no truth class")))?;
        let c: u64 = label
            .parse()
            .map_err(|_| CliError::Input(format!("label '{label}' for '{id}' is not a cluster number")))?;
        clusters.push(c);
        classes.push(class.to_string());
    }
    if seen.len() != truth_map.len() {
        let missing = truth.iter().find(|(i, _)| !seen.contains(i.as_str())).map(|(i, _)| i.clone()).unwrap_or_default();
        return Err(CliError::Input(format!("truth id '{missing}' has no cluster label")));
    }
    if clusters.is_empty() {
        return Err(CliError::Input("no labelled items".into()));
    }
    let table = kwass::contingency(&clusters, &classes)?;
    let chi_square = kwass::chi_square(&table)?;
    let mut report = EvalReport {
        contingency: table,
        chi_square,
        noisy_cluster: None,
        noisy_rate: None,
        clean_rate: None,
        overall: None,
    };
    let t = &report.contingency;
    let noisy_col = t.col_labels.iter().position(|c| c == noisy_class);
    if let (true, Some(col)) = (t.counts.len() == 2 && t.col_labels.len() == 2, noisy_col) {
        let frac = |r: usize| t.counts[r][col] as f64 / t.counts[r].iter().sum::<u64>() as f64;
        let row = if frac(1) > frac(0) { 1 } else { 0 };
        let rates = kwass::prediction_rates(t, row, col)?;
        report.noisy_cluster = Some(t.row_labels[row].clone());
        report.noisy_rate = Some(rates.noisy_rate);
        report.clean_rate = Some(rates.clean_rate);
        report.overall = Some(rates.overall);
    }
    Ok(report)
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let labels = read_id_pairs(&args.labels, "labels")?;
    let truth = read_id_pairs(&args.truth, "truth")?;
    let report = evaluate(&labels, &truth, &args.noisy_class)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_output(args.out.as_deref(), &(json + "\n"))
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    if args.sets == 0 || args.samples < 2 {
        return Err(CliError::Usage("--sets must be positive and --samples at least 2".into()));
    }
    if !(args.noise >= 0.0 && args.noise.is_finite() && args.separation.is_finite()) {
        return Err(CliError::Usage("--noise must be nonnegative and --separation finite".into()));
    }
    let corpus = generate(&SynthConfig {
        per_class: args.sets,
        samples: args.samples,
        separation: args.separation,
        noise: args.noise,
        seed: args.seed,
    })?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    let width = args.samples.to_string().len().max(2);
    let mut header = vec!["id".to_string()];
    header.extend((1..=args.samples).map(|k| format!("s{k:0width$}")));
    let mut sets = csv_line(&header);
    let mut truth = csv_line(&["id", "class"]);
    for (set, class) in corpus.sets.iter().zip(&corpus.truth) {
        let mut fields = vec![set.id().to_string()];
        fields.extend(set.samples().map(|s| format_f64(s[0])));
        sets.push_str(&csv_line(&fields));
        truth.push_str(&csv_line(&[set.id(), class]));
    }
    write_output(Some(&args.out.join("sets.csv")), &sets)?;
    write_output(Some(&args.out.join("truth.csv")), &truth)
}
