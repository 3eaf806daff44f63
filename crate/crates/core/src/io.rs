//! CSV ingestion of prediction files and emission of results.
//!
//! Unlabeled files have the header `record_id,pred_<alg>...[,covariates]`;
//! labeled files have `record_id,true_label,pred_<alg>...`. Any column of an
//! unlabeled file that is neither the id nor a prediction is a covariate.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::covariate::{group_covariates, DesignMatrix, StratifiedCounts};
use crate::error::{Error, Result};
use crate::gibbs::ensemble::{EnsembleCounts, EnsembleTransferErrors};
use crate::model::{ClassLabelMap, PredictionCounts, TransferErrorMatrix};
use crate::num::Real;
use crate::summary::{ParamId, PosteriorSummary};

const PRED_PREFIX: &str = "pred_";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(f))
}

/// Column positions of `record_id`, an optional `true_label`, the
/// prediction columns and the rest.
struct Columns {
    id: usize,
    truth: Option<usize>,
    preds: Vec<(String, usize)>,
    other: Vec<(String, usize)>,
}

fn columns(path: &Path, header: &csv::StringRecord, labeled: bool) -> Result<Columns> {
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("{}: missing column `{name}`", path.display())))
    };
    let id = find("record_id")?;
    let truth = if labeled { Some(find("true_label")?) } else { None };
    let mut preds = Vec::new();
    let mut other = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if i == id || Some(i) == truth {
            continue;
        }
        match h.strip_prefix(PRED_PREFIX) {
            Some(alg) if !alg.is_empty() => preds.push((alg.to_string(), i)),
            _ => other.push((h.to_string(), i)),
        }
    }
    if preds.is_empty() {
        return Err(Error::Input(format!("{}: no `{PRED_PREFIX}<algorithm>` column", path.display())));
    }
    if labeled && !other.is_empty() {
        return Err(Error::Input(format!("{}: unexpected column `{}`", path.display(), other[0].0)));
    }
    Ok(Columns { id, truth, preds, other })
}

/// Raw contents of an unlabeled prediction file.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledFile {
    pub algorithms: Vec<String>,
    pub record_ids: Vec<String>,
    /// Per record, one label per algorithm.
    pub predictions: Vec<Vec<String>>,
    pub covariate_names: Vec<String>,
    pub covariates: Vec<Vec<String>>,
}

/// Raw contents of a labeled prediction file.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFile {
    pub algorithms: Vec<String>,
    pub record_ids: Vec<String>,
    pub truth: Vec<String>,
    pub predictions: Vec<Vec<String>>,
}

fn read_rows(path: &Path, labeled: bool) -> Result<(Columns, Vec<csv::StringRecord>)> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers()?.clone();
    let cols = columns(path, &header, labeled)?;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("{}: line {}: {e}", path.display(), r + 2)))?;
        rows.push(rec);
    }
    Ok((cols, rows))
}

pub fn read_unlabeled(path: &Path) -> Result<UnlabeledFile> {
    let (cols, rows) = read_rows(path, false)?;
    if rows.is_empty() {
        return Err(Error::EmptyData(format!("{}: no records", path.display())));
    }
    Ok(UnlabeledFile {
        algorithms: cols.preds.iter().map(|(a, _)| a.clone()).collect(),
        record_ids: rows.iter().map(|r| r[cols.id].to_string()).collect(),
        predictions: rows.iter().map(|r| cols.preds.iter().map(|&(_, i)| r[i].to_string()).collect()).collect(),
        covariate_names: cols.other.iter().map(|(n, _)| n.clone()).collect(),
        covariates: rows.iter().map(|r| cols.other.iter().map(|&(_, i)| r[i].to_string()).collect()).collect(),
    })
}

/// A header-only file is valid and yields zero transfer-error counts.
pub fn read_labeled(path: &Path) -> Result<LabeledFile> {
    let (cols, rows) = read_rows(path, true)?;
    let truth = cols.truth.expect("labeled columns include the truth");
    Ok(LabeledFile {
        algorithms: cols.preds.iter().map(|(a, _)| a.clone()).collect(),
        record_ids: rows.iter().map(|r| r[cols.id].to_string()).collect(),
        truth: rows.iter().map(|r| r[truth].to_string()).collect(),
        predictions: rows.iter().map(|r| cols.preds.iter().map(|&(_, i)| r[i].to_string()).collect()).collect(),
    })
}

/// Both files must list the same algorithms in the same order.
pub fn check_algorithms(u: &UnlabeledFile, l: &LabeledFile) -> Result<()> {
    if u.algorithms != l.algorithms {
        return Err(Error::Input(format!(
            "algorithm columns differ: unlabeled has {:?}, labeled has {:?}",
            u.algorithms, l.algorithms
        )));
    }
    Ok(())
}

/// Every label seen in either file.
pub fn infer_classes(u: &UnlabeledFile, l: Option<&LabeledFile>) -> Result<ClassLabelMap> {
    let mut seen: Vec<&str> = u.predictions.iter().flatten().map(String::as_str).collect();
    if let Some(l) = l {
        seen.extend(l.truth.iter().map(String::as_str));
        seen.extend(l.predictions.iter().flatten().map(String::as_str));
    }
    ClassLabelMap::from_observed(seen)
}

fn encode(classes: &ClassLabelMap, label: &str, what: &str, row: usize) -> Result<usize> {
    classes.index_of(label).ok_or_else(|| {
        Error::Input(format!("{what} line {}: label `{label}` is not a declared class", row + 2))
    })
}

fn encode_preds(classes: &ClassLabelMap, preds: &[Vec<String>], what: &str) -> Result<Vec<Vec<usize>>> {
    preds
        .iter()
        .enumerate()
        .map(|(r, row)| row.iter().map(|l| encode(classes, l, what, r)).collect())
        .collect()
}

impl UnlabeledFile {
    pub fn n_records(&self) -> usize {
        self.record_ids.len()
    }

    pub fn n_algorithms(&self) -> usize {
        self.algorithms.len()
    }

    /// Class indices per record and algorithm; unknown labels are reported
    /// with their line number.
    pub fn encoded(&self, classes: &ClassLabelMap) -> Result<Vec<Vec<usize>>> {
        encode_preds(classes, &self.predictions, "unlabeled file")
    }

    pub fn prediction_counts(&self, k: usize, classes: &ClassLabelMap) -> Result<PredictionCounts> {
        let enc = self.encoded(classes)?;
        PredictionCounts::from_labels(classes.len(), enc.iter().map(|r| r[k]))
    }

    pub fn ensemble_counts(&self, classes: &ClassLabelMap) -> Result<EnsembleCounts> {
        EnsembleCounts::from_records(classes.len(), self.encoded(classes)?)
    }

    /// Groups records by their covariate pattern and counts algorithm `k`'s
    /// predictions within each group. With no covariate columns everything
    /// falls in one intercept-only group. Also returns each record's group.
    pub fn stratified_counts(
        &self,
        k: usize,
        classes: &ClassLabelMap,
    ) -> Result<(StratifiedCounts, DesignMatrix, Vec<usize>)> {
        let enc = self.encoded(classes)?;
        let (design, groups) = if self.covariate_names.is_empty() {
            (DesignMatrix::intercept_only(), vec![0; enc.len()])
        } else {
            group_covariates(&self.covariate_names, &self.covariates)?
        };
        let counts = StratifiedCounts::from_records(
            design.n_groups(),
            classes.len(),
            groups.iter().zip(&enc).map(|(&g, r)| (g, r[k])),
        )?;
        Ok((counts, design, groups))
    }
}

impl LabeledFile {
    pub fn encoded(&self, classes: &ClassLabelMap) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
        let truth = self
            .truth
            .iter()
            .enumerate()
            .map(|(r, l)| encode(classes, l, "labeled file", r))
            .collect::<Result<_>>()?;
        Ok((truth, encode_preds(classes, &self.predictions, "labeled file")?))
    }

    pub fn transfer_errors(&self, k: usize, classes: &ClassLabelMap) -> Result<TransferErrorMatrix> {
        let (truth, preds) = self.encoded(classes)?;
        TransferErrorMatrix::from_pairs(classes.len(), truth.iter().zip(&preds).map(|(&t, p)| (t, p[k])))
    }

    pub fn ensemble_errors(&self, classes: &ClassLabelMap) -> Result<EnsembleTransferErrors> {
        let t = (0..self.algorithms.len())
            .map(|k| self.transfer_errors(k, classes))
            .collect::<Result<_>>()?;
        EnsembleTransferErrors::new(t)
    }
}

/// Shortest `%.17g`-style rendering: 17 significant digits, trailing zeros
/// dropped, exponent form outside `1e-5 <= |x| < 1e17`. Parsing the result
/// gives back `x` exactly.
pub fn fmt_f64(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..17).contains(&exp) {
        trim(&format!("{x:.*}", (16 - exp) as usize))
    } else {
        format!("{}e{exp}", trim(mant))
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

/// Human-readable names for one parameter: block, classifier, row, column.
pub type ParamLabels = (String, String, String, String);

/// Names parameters using class labels for class indices, the algorithm
/// name for the classifier index and `terms` for regression-coefficient
/// rows.
pub fn param_labeler<'a>(
    classes: &'a ClassLabelMap,
    algorithms: &'a [String],
    terms: &'a [String],
) -> impl Fn(&ParamId) -> ParamLabels + 'a {
    move |id| {
        let class = |i: Option<usize>| i.map(|i| classes.label(i).to_string()).unwrap_or_default();
        let (row, col) = match id.block {
            "beta" => (id.row.map(|r| terms[r].clone()).unwrap_or_default(), class(id.col)),
            "p_group" => (id.row.map(|g| g.to_string()).unwrap_or_default(), class(id.col)),
            _ => (class(id.row), class(id.col)),
        };
        let k = id.k.map(|k| algorithms[k].clone()).unwrap_or_default();
        (id.block.to_string(), k, row, col)
    }
}

pub fn write_posterior_summary<T: Real>(
    path: &Path,
    s: &PosteriorSummary<T>,
    labels: impl Fn(&ParamId) -> ParamLabels,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["parameter", "classifier", "row", "col", "mean", "sd", "q2.5", "q50", "q97.5"])?;
    for (id, st) in s.layout.iter().zip(&s.stats) {
        let (b, k, r, c) = labels(id);
        let nums = [st.mean, st.sd, st.q025, st.q50, st.q975].map(|x| fmt_f64(x.f64()));
        w.write_record([b, k, r, c].into_iter().chain(nums))?;
    }
    w.flush().map_err(io_err(path))
}

/// One row per retained draw, prefixed by the chain number. Columns are
/// named `block[classifier][row,col]`.
pub fn write_draws<T: Real>(path: &Path, s: &PosteriorSummary<T>, labels: impl Fn(&ParamId) -> ParamLabels) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["chain".to_string()];
    for id in &s.layout {
        header.push(column_name(labels(id)));
    }
    w.write_record(&header)?;
    for (c, chain) in s.chains.iter().enumerate() {
        for d in 0..chain.n_draws() {
            let row = std::iter::once(c.to_string()).chain(chain.draw(d).iter().map(|x| fmt_f64(x.f64())));
            w.write_record(row)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// `block[classifier][row,col]` with empty parts left out.
pub fn column_name((b, k, r, c): ParamLabels) -> String {
    let mut s = b;
    if !k.is_empty() {
        s.push_str(&format!("[{k}]"));
    }
    match (r.is_empty(), c.is_empty()) {
        (false, false) => s.push_str(&format!("[{r},{c}]")),
        (false, true) => s.push_str(&format!("[{r}]")),
        _ => {}
    }
    s
}

/// Writes string rows under a header. Format floats with [`fmt_f64`].
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_unlabeled(
    path: &Path,
    algorithms: &[String],
    classes: &ClassLabelMap,
    records: impl IntoIterator<Item = (String, Vec<usize>)>,
) -> Result<()> {
    let header: Vec<String> = std::iter::once("record_id".to_string())
        .chain(algorithms.iter().map(|a| format!("{PRED_PREFIX}{a}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        path,
        &header,
        records.into_iter().map(|(id, p)| {
            std::iter::once(id).chain(p.iter().map(|&j| classes.label(j).to_string())).collect()
        }),
    )
}

pub fn write_labeled(
    path: &Path,
    algorithms: &[String],
    classes: &ClassLabelMap,
    records: impl IntoIterator<Item = (String, usize, Vec<usize>)>,
) -> Result<()> {
    let header: Vec<String> = ["record_id".to_string(), "true_label".to_string()]
        .into_iter()
        .chain(algorithms.iter().map(|a| format!("{PRED_PREFIX}{a}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        path,
        &header,
        records.into_iter().map(|(id, t, p)| {
            [id, classes.label(t).to_string()]
                .into_iter()
                .chain(p.iter().map(|&j| classes.label(j).to_string()))
                .collect()
        }),
    )
}

/// Writes `text` to `path`, creating or truncating the file.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
