use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use vacalib::covariate::{run_covariate_chain, RegressionPrior};
use vacalib::em::run_em;
use vacalib::gibbs::ensemble::{run_independent, run_joint, EnsembleCounts, EnsembleTransferErrors};
use vacalib::gibbs::single::run_chain;
use vacalib::gibbs::ChainConfig;
use vacalib::individual::individual_posteriors;
use vacalib::io::{
    check_algorithms, column_name, fmt_f64, infer_classes, param_labeler, read_labeled, read_unlabeled, write_draws,
    write_labeled, write_posterior_summary, write_table, write_unlabeled, LabeledFile, ParamLabels, UnlabeledFile,
};
use vacalib::metrics::{ccc, csmf_accuracy, ConfusionCounts};
use vacalib::model::{ClassLabelMap, ClassProbs};
use vacalib::sim::{build_dataset, run_experiment, ExperimentOptions, MatrixChoice, Method, ProbSource, ScenarioSpec};
use vacalib::summary::{ParamId, PosteriorSummary};
use vacalib::{Error, Result};

use crate::json;
use crate::opts::{ModelKind, Opts};

const RHAT_WARN: f64 = 1.05;
const DEFAULT_PRIOR_VARIANCE: f64 = 100.0;

/// Both input files, checked against each other, with the class set.
struct Inputs {
    u: UnlabeledFile,
    l: LabeledFile,
    classes: ClassLabelMap,
}

fn load_inputs(opts: &Opts, cmd: &str) -> Result<Inputs> {
    let u = read_unlabeled(opts.require(&opts.unlabeled, "unlabeled", cmd)?)?;
    let l = read_labeled(opts.require(&opts.labeled, "labeled", cmd)?)?;
    check_algorithms(&u, &l)?;
    let classes = match &opts.classes {
        Some(c) => ClassLabelMap::new(c.iter().cloned())?,
        None => infer_classes(&u, Some(&l))?,
    };
    Ok(Inputs { u, l, classes })
}

fn algorithm_index(opts: &Opts, u: &UnlabeledFile) -> Result<usize> {
    match &opts.algorithm {
        None => Ok(0),
        Some(a) => u
            .algorithms
            .iter()
            .position(|x| x == a)
            .ok_or_else(|| Error::Input(format!("no column `pred_{a}`; have {:?}", u.algorithms))),
    }
}

/// Acceptance rates, per-chain means and potential scale reductions,
/// keyed by parameter name.
fn chain_diagnostics(s: &PosteriorSummary<f64>, labels: &dyn Fn(&ParamId) -> ParamLabels) -> Value {
    let names: Vec<String> = s.layout.iter().map(|id| column_name(labels(id))).collect();
    let gamma: Vec<&String> = s.layout.iter().zip(&names).filter(|(id, _)| id.block == "gamma").map(|(_, n)| n).collect();
    let acceptance: Vec<Value> = s
        .chains
        .iter()
        .map(|c| {
            let rates: BTreeMap<&String, f64> = gamma.iter().copied().zip(c.acceptance.iter().copied()).collect();
            json!(rates)
        })
        .collect();
    let rhat: BTreeMap<usize, f64> = s.rhat.iter().copied().collect();
    let params: Vec<Value> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            json!({
                "parameter": n,
                "chain_means": s.chain_means.iter().map(|m| m[i]).collect::<Vec<_>>(),
                "rhat": rhat.get(&i),
            })
        })
        .collect();
    let max_rhat = s.max_rhat();
    if let Some(r) = max_rhat.filter(|&r| r > RHAT_WARN) {
        log::warn!("largest potential scale reduction is {r:.3} (above {RHAT_WARN}); run longer chains");
    }
    json!({
        "n_chains": s.chains.len(),
        "n_draws": s.n_draws(),
        "acceptance": acceptance,
        "max_rhat": max_rhat,
        "rhat_warn_above": RHAT_WARN,
        "parameters": params,
    })
}

fn write_sampler_outputs(
    dir: &Path,
    opts: &Opts,
    cmd: &str,
    s: &PosteriorSummary<f64>,
    labels: &dyn Fn(&ParamId) -> ParamLabels,
    extra: Value,
) -> Result<()> {
    write_posterior_summary(&dir.join("posterior_summary.csv"), s, labels)?;
    if opts.write_draws.unwrap_or(false) {
        write_draws(&dir.join("draws.csv"), s, labels)?;
    }
    let diag = json!({
        "command": cmd,
        "seed": opts.seed(),
        "chains": chain_diagnostics(s, labels),
        "model": extra,
        "config": opts,
    });
    json::write(&dir.join("diagnostics.json"), &diag)
}

fn single_model(opts: &Opts, inp: &Inputs, chain: &ChainConfig) -> Result<(PosteriorSummary<f64>, usize)> {
    let k = algorithm_index(opts, &inp.u)?;
    let v = inp.u.prediction_counts(k, &inp.classes)?;
    let t = inp.l.transfer_errors(k, &inp.classes)?;
    Ok((run_chain(&v, &t, &opts.hyper(), chain)?, k))
}

fn ensemble_model(opts: &Opts, inp: &Inputs, chain: &ChainConfig, joint: bool) -> Result<PosteriorSummary<f64>> {
    let counts: EnsembleCounts = inp.u.ensemble_counts(&inp.classes)?;
    let errors: EnsembleTransferErrors = inp.l.ensemble_errors(&inp.classes)?;
    if !errors.shares_row_sums() {
        return Err(Error::Input("labeled counts must share row sums across algorithms".into()));
    }
    let hp = opts.hyper();
    if joint {
        run_joint(&counts, &errors, &hp, chain)
    } else {
        run_independent(&counts, &errors, &hp, chain)
    }
}

pub fn calibrate(opts: &Opts) -> Result<()> {
    let inp = load_inputs(opts, "calibrate")?;
    let (s, k) = single_model(opts, &inp, &opts.chain(ChainConfig::default()))?;
    let labels = param_labeler(&inp.classes, &inp.u.algorithms, &[]);
    let extra = json!({ "kind": "single", "algorithm": inp.u.algorithms[k], "classes": inp.classes.labels() });
    write_sampler_outputs(&opts.out_dir()?, opts, "calibrate", &s, &labels, extra)
}

fn ensemble_kind(opts: &Opts) -> Result<bool> {
    match opts.model.unwrap_or(ModelKind::EnsembleIndependent) {
        ModelKind::EnsembleJoint => Ok(true),
        ModelKind::EnsembleIndependent => Ok(false),
        ModelKind::Single => Err(Error::Input("`ensemble` needs model ensemble-joint or ensemble-independent".into())),
    }
}

pub fn ensemble(opts: &Opts) -> Result<()> {
    let inp = load_inputs(opts, "ensemble")?;
    let joint = ensemble_kind(opts)?;
    let s = ensemble_model(opts, &inp, &opts.chain(ChainConfig::default()), joint)?;
    let labels = param_labeler(&inp.classes, &inp.u.algorithms, &[]);
    let extra = json!({
        "kind": if joint { "ensemble-joint" } else { "ensemble-independent" },
        "algorithms": inp.u.algorithms,
        "classes": inp.classes.labels(),
    });
    write_sampler_outputs(&opts.out_dir()?, opts, "ensemble", &s, &labels, extra)
}

pub fn covariate(opts: &Opts) -> Result<()> {
    let inp = load_inputs(opts, "covariate")?;
    if inp.u.covariate_names.is_empty() {
        log::warn!("unlabeled file has no covariate columns; fitting an intercept-only model");
    }
    let k = algorithm_index(opts, &inp.u)?;
    let (counts, design, groups) = inp.u.stratified_counts(k, &inp.classes)?;
    let t = inp.l.transfer_errors(k, &inp.classes)?;
    let var = opts.prior_variance.unwrap_or(DEFAULT_PRIOR_VARIANCE);
    if var.is_nan() || var <= 0.0 || var.is_infinite() {
        return Err(Error::ParameterDomain(format!("prior variance must be positive, got {var}")));
    }
    let prior = RegressionPrior::isotropic(design.n_terms(), inp.classes.len(), var);
    let s = run_covariate_chain(&counts, &design, &t, &opts.hyper(), &prior, &opts.chain(ChainConfig::default()))?;
    // describe each group by its first record's covariate values
    let mut first = vec![None; design.n_groups()];
    for (r, &g) in groups.iter().enumerate() {
        first[g].get_or_insert(r);
    }
    let group_info: Vec<Value> = first
        .iter()
        .enumerate()
        .map(|(g, r)| {
            let vals: BTreeMap<&String, &String> =
                inp.u.covariate_names.iter().zip(&inp.u.covariates[r.expect("every group has a record")]).collect();
            json!({ "group": g, "covariates": vals, "n_records": counts.group_sizes()[g] })
        })
        .collect();
    let labels = param_labeler(&inp.classes, &inp.u.algorithms, design.terms());
    let extra = json!({
        "kind": "covariate",
        "algorithm": inp.u.algorithms[k],
        "classes": inp.classes.labels(),
        "terms": design.terms(),
        "groups": group_info,
    });
    write_sampler_outputs(&opts.out_dir()?, opts, "covariate", &s, &labels, extra)
}

pub fn map(opts: &Opts) -> Result<()> {
    let inp = load_inputs(opts, "map")?;
    let k = algorithm_index(opts, &inp.u)?;
    let v = inp.u.prediction_counts(k, &inp.classes)?;
    let t = inp.l.transfer_errors(k, &inp.classes)?;
    let cfg = opts.em();
    let fit = run_em(&v, &t, &opts.hyper(), &cfg)?;
    let c = inp.classes.len();
    let label = |i: usize| inp.classes.label(i).to_string();
    let mut rows = Vec::new();
    for i in 0..c {
        rows.push(vec!["p".into(), String::new(), label(i), String::new(), fmt_f64(fit.state.p[i])]);
    }
    for i in 0..c {
        for j in 0..c {
            rows.push(vec!["m".into(), String::new(), label(i), label(j), fmt_f64(fit.state.m.get(i, j))]);
        }
    }
    for i in 0..c {
        rows.push(vec!["gamma".into(), String::new(), label(i), String::new(), fmt_f64(fit.state.gamma[i])]);
    }
    let dir = opts.out_dir()?;
    write_table(&dir.join("map_estimate.csv"), &["parameter", "classifier", "row", "col", "estimate"], rows)?;
    if !fit.diagnostics.converged {
        log::warn!("EM stopped after {} iterations without converging", fit.diagnostics.iterations);
    }
    let diag = json!({
        "command": "map",
        "seed": opts.seed(),
        "algorithm": inp.u.algorithms[k],
        "classes": inp.classes.labels(),
        "em": fit.diagnostics,
        "em_config": cfg,
        "config": opts,
    });
    json::write(&dir.join("diagnostics.json"), &diag)
}

pub fn predict_individual(opts: &Opts) -> Result<()> {
    let inp = load_inputs(opts, "predict-individual")?;
    let chain = opts.chain(ChainConfig::default());
    let enc = inp.u.encoded(&inp.classes)?;
    let kind = opts.model.unwrap_or(ModelKind::Single);
    let (s, patterns, ensemble): (_, Vec<Vec<usize>>, bool) = match kind {
        ModelKind::Single => {
            let (s, k) = single_model(opts, &inp, &chain)?;
            (s, enc.iter().map(|r| vec![r[k]]).collect(), false)
        }
        ModelKind::EnsembleIndependent | ModelKind::EnsembleJoint => {
            let s = ensemble_model(opts, &inp, &chain, kind == ModelKind::EnsembleJoint)?;
            (s, enc, true)
        }
    };
    let post = individual_posteriors(&patterns, &s, ensemble)?;
    let c = inp.classes.len();
    let mut header = vec!["record_id".to_string()];
    header.extend(inp.classes.labels().iter().map(|l| format!("prob[{l}]")));
    header.extend(inp.classes.labels().iter().map(|l| format!("se[{l}]")));
    header.extend(["n_used".to_string(), "n_excluded".to_string()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = inp.u.record_ids.iter().zip(&post).map(|(id, p)| {
        let mut r = vec![id.clone()];
        r.extend((0..c).map(|i| fmt_f64(p.probs[i])));
        r.extend((0..c).map(|i| fmt_f64(p.mc_se[i])));
        r.extend([p.n_used.to_string(), p.n_excluded.to_string()]);
        r
    });
    let dir = opts.out_dir()?;
    write_table(&dir.join("individual_posteriors.csv"), &header, rows)?;
    let labels = param_labeler(&inp.classes, &inp.u.algorithms, &[]);
    let extra = json!({ "kind": kind, "algorithms": inp.u.algorithms, "classes": inp.classes.labels() });
    write_sampler_outputs(&dir, opts, "predict-individual", &s, &labels, extra)
}

pub fn simulate(opts: &Opts) -> Result<()> {
    let matrices = opts
        .matrices
        .clone()
        .unwrap_or_else(|| vec!["M2".into()])
        .iter()
        .map(|m| m.parse::<MatrixChoice>())
        .collect::<Result<Vec<_>>>()?;
    let d = ScenarioSpec::default();
    let spec = ScenarioSpec {
        matrices,
        p_unlabeled: ProbSource::Flat,
        p_labeled: ProbSource::Flat,
        n_labeled: opts.n_labeled.unwrap_or(d.n_labeled),
        n_unlabeled: opts.n_unlabeled.unwrap_or(d.n_unlabeled),
        band: Some(opts.band.unwrap_or(vacalib::sim::Band::High)),
        seed: opts.seed(),
    };
    let k = spec.matrices.len();
    let methods: Vec<Method> = match &opts.methods {
        Some(m) => m.iter().map(|x| x.parse()).collect::<Result<_>>()?,
        None if k > 1 => vec![
            Method::Naive,
            Method::CalibratedSingle,
            Method::CalibratedEnsembleIndependent,
            Method::CalibratedEnsembleJoint,
        ],
        None => vec![Method::Naive, Method::CalibratedSingle, Method::Map],
    };
    let de = ExperimentOptions::default();
    let eopts = ExperimentOptions {
        hyper: opts.hyper(),
        chain: opts.chain(de.chain.clone()),
        em: opts.em(),
        ccc_variant: opts.ccc_variant.unwrap_or_default(),
        threads: opts.threads.unwrap_or(de.threads),
    };
    let replicates = opts.replicates.unwrap_or(20);
    let rows = run_experiment(&spec, replicates, &methods, &eopts)?;
    let dir = opts.out_dir()?;
    let opt_str = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
    write_table(
        &dir.join("simulation_results.csv"),
        &["replicate", "method", "classifier", "metric", "class", "value"],
        rows.iter().map(|r| {
            vec![
                r.replicate.to_string(),
                r.method.to_string(),
                opt_str(r.classifier),
                r.metric.to_string(),
                opt_str(r.class),
                fmt_f64(r.value),
            ]
        }),
    )?;
    type Key<'a> = (&'a str, Option<usize>, &'a str, Option<usize>);
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.method, r.classifier, r.metric, r.class)).or_default().push(r.value);
    }
    write_table(
        &dir.join("simulation_summary.csv"),
        &["method", "classifier", "metric", "class", "n", "mean", "sd"],
        groups.iter().map(|((m, k, metric, c), xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            vec![m.to_string(), opt_str(*k), metric.to_string(), opt_str(*c), xs.len().to_string(), fmt_f64(mean), fmt_f64(sd)]
        }),
    )?;
    if opts.emit_dataset.unwrap_or(false) {
        emit_dataset(&dir, &spec)?;
    }
    let diag = json!({
        "command": "simulate",
        "seed": opts.seed(),
        "replicates": replicates,
        "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "chain": eopts.chain,
        "config": opts,
    });
    json::write(&dir.join("diagnostics.json"), &diag)
}

/// The dataset of replicate 0 in the input formats, plus its true
/// unlabeled-set class probabilities.
fn emit_dataset(dir: &Path, spec: &ScenarioSpec) -> Result<()> {
    let seed = vacalib::rng::derive_seed(spec.seed, 0);
    let data = build_dataset(&ScenarioSpec { seed, ..spec.clone() })?;
    let classes = ClassLabelMap::new((1..=data.n_classes()).map(|i| i.to_string()))?;
    let algs: Vec<String> = (1..=data.n_classifiers()).map(|k| format!("c{k}")).collect();
    write_unlabeled(
        &dir.join("unlabeled.csv"),
        &algs,
        &classes,
        data.unlabeled.iter().enumerate().map(|(r, (_, a))| (format!("u{}", r + 1), a.clone())),
    )?;
    write_labeled(
        &dir.join("labeled.csv"),
        &algs,
        &classes,
        data.labeled.iter().enumerate().map(|(r, (t, a))| (format!("l{}", r + 1), *t, a.clone())),
    )?;
    write_table(
        &dir.join("truth.csv"),
        &["class", "probability"],
        (0..data.n_classes()).map(|i| vec![classes.label(i).to_string(), fmt_f64(data.p_unlabeled[i])]),
    )
}

/// `class -> probability` from a posterior summary (means of `p`), a MAP
/// estimate, or a plain two-column table.
fn read_probabilities(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path: path.display().to_string(), source },
            k => Error::Input(format!("{}: {k:?}", path.display())),
        })?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (class_col, value_col, filter) = if let Some(pc) = col("parameter") {
        let v = col("mean")
            .or_else(|| col("estimate"))
            .ok_or_else(|| Error::Input(format!("{}: no `mean` or `estimate` column", path.display())))?;
        let r = col("row").ok_or_else(|| Error::Input(format!("{}: missing column `row`", path.display())))?;
        (r, v, Some((pc, col("classifier"))))
    } else {
        let c = col("class").ok_or_else(|| Error::Input(format!("{}: missing column `class`", path.display())))?;
        let v = col("probability").ok_or_else(|| Error::Input(format!("{}: missing column `probability`", path.display())))?;
        (c, v, None)
    };
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if let Some((pc, kc)) = filter {
            if &rec[pc] != "p" || kc.is_some_and(|k| !rec[k].is_empty()) {
                continue;
            }
        }
        let x: f64 = rec[value_col]
            .parse()
            .map_err(|_| Error::Input(format!("{}: line {}: `{}` is not a number", path.display(), r + 2, &rec[value_col])))?;
        out.push((rec[class_col].to_string(), x));
    }
    if out.is_empty() {
        return Err(Error::EmptyData(format!("{}: no class probabilities", path.display())));
    }
    Ok(out)
}

pub fn metrics(opts: &Opts) -> Result<()> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut classes = opts.classes.clone().map(ClassLabelMap::new).transpose()?;
    if opts.estimate.is_some() || opts.truth.is_some() {
        let est = read_probabilities(opts.require(&opts.estimate, "estimate", "metrics")?)?;
        let truth = read_probabilities(opts.require(&opts.truth, "truth", "metrics")?)?;
        let cl = match &classes {
            Some(c) => c.clone(),
            None => ClassLabelMap::new(truth.iter().map(|(c, _)| c.clone()))?,
        };
        let order = |v: &[(String, f64)], what: &str| -> Result<ClassProbs<f64>> {
            let mut x = vec![None; cl.len()];
            for (c, p) in v {
                let i = cl
                    .index_of(c)
                    .ok_or_else(|| Error::Input(format!("{what}: class `{c}` is not a declared class")))?;
                x[i] = Some(*p);
            }
            let x = x
                .into_iter()
                .enumerate()
                .map(|(i, p)| p.ok_or_else(|| Error::Input(format!("{what}: no value for class `{}`", cl.label(i)))))
                .collect::<Result<Vec<_>>>()?;
            ClassProbs::from_weights(x)
        };
        let (e, t) = (order(&est, "estimate")?, order(&truth, "truth")?);
        rows.push(vec!["csmfa".into(), String::new(), String::new(), fmt_f64(csmf_accuracy(&e, &t)?)]);
        for i in 0..cl.len() {
            rows.push(vec!["bias".into(), String::new(), cl.label(i).into(), fmt_f64(e[i] - t[i])]);
        }
        classes = Some(cl);
    }
    if let Some(lp) = &opts.labeled {
        let l = read_labeled(lp)?;
        let cl = match &classes {
            Some(c) => c.clone(),
            None => ClassLabelMap::from_observed(l.truth.iter().chain(l.predictions.iter().flatten()))?,
        };
        let (truth, preds) = l.encoded(&cl)?;
        let variant = opts.ccc_variant.unwrap_or_default();
        for (k, alg) in l.algorithms.iter().enumerate() {
            let conf = ConfusionCounts::from_pairs(cl.len(), truth.iter().zip(&preds).map(|(&t, p)| (t, p[k])))?;
            rows.push(vec!["ccc".into(), alg.clone(), String::new(), fmt_f64(ccc(&conf, variant)?)]);
        }
    }
    if rows.is_empty() {
        return Err(Error::Input("`metrics` needs --estimate and --truth, or --labeled".into()));
    }
    write_table(&opts.out_dir()?.join("metrics.csv"), &["metric", "classifier", "class", "value"], rows)
}
