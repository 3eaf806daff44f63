//! Synthetic labeled and unlabeled sets with known class probabilities and
//! misclassification behaviour, and a replicate loop that scores the
//! estimators on them.

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::distributions::{categorical, draw_dirichlet};
use crate::em::{run_em, EmConfig};
use crate::error::{Error, Result};
use crate::gibbs::ensemble::{run_independent, run_joint, EnsembleCounts, EnsembleTransferErrors};
use crate::gibbs::single::run_chain;
use crate::gibbs::ChainConfig;
use crate::individual::individual_posteriors;
use crate::metrics::{ccc, csmf_accuracy, CccVariant, ConfusionCounts};
use crate::model::{naive_estimate, ClassProbs, Hyperparams, MisclassMatrix, PredictionCounts, TransferErrorMatrix};
use crate::rng::{derive_seed, RngStream};

const REJECTION_BUDGET: u64 = 1_000_000;

/// The three reference misclassification patterns over four classes, or a
/// user-supplied matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum MatrixChoice {
    /// Perfect classifier.
    M1,
    /// A few large, structured errors.
    M2,
    /// Many small errors: `0.6 I + 0.1 11'`.
    M3,
    Custom(MisclassMatrix<f64>),
}

impl MatrixChoice {
    pub fn matrix(&self) -> MisclassMatrix<f64> {
        match self {
            Self::M1 => MisclassMatrix::identity(4),
            Self::M2 => MisclassMatrix::from_rows(&[
                &[1.0, 0.0, 0.0, 0.0],
                &[0.65, 0.35, 0.0, 0.0],
                &[0.0, 0.0, 0.5, 0.5],
                &[0.0, 0.0, 0.0, 1.0],
            ])
            .expect("M2 is row-stochastic"),
            Self::M3 => {
                let m = (0..16).map(|n| if n / 4 == n % 4 { 0.7 } else { 0.1 }).collect();
                MisclassMatrix::new(4, m).expect("M3 is row-stochastic")
            }
            Self::Custom(m) => m.clone(),
        }
    }
}

impl FromStr for MatrixChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Self::M1),
            "M2" => Ok(Self::M2),
            "M3" => Ok(Self::M3),
            _ => Err(Error::Input(format!("unknown matrix `{s}` (expected M1, M2 or M3)"))),
        }
    }
}

/// Bands on `CSMFA(p_L, p_U)`, i.e. on how far the labeled set's class mix
/// is from the unlabeled set's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Low,
    Medium,
    High,
}

impl Band {
    pub fn contains(self, csmfa: f64) -> bool {
        match self {
            Self::Low => csmfa < 0.4,
            Self::Medium => (0.4..=0.6).contains(&csmfa),
            Self::High => csmfa > 0.6,
        }
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            _ => Err(Error::Input(format!("unknown band `{s}` (expected low, medium or high)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProbSource {
    Fixed(ClassProbs<f64>),
    /// A fresh draw from the flat Dirichlet.
    Flat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    /// One matrix per classifier.
    pub matrices: Vec<MatrixChoice>,
    pub p_unlabeled: ProbSource,
    pub p_labeled: ProbSource,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// When set, `(p_L, p_U)` is drawn by rejection into the band and the
    /// two sources above are ignored.
    pub band: Option<Band>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            matrices: vec![MatrixChoice::M2],
            p_unlabeled: ProbSource::Flat,
            p_labeled: ProbSource::Flat,
            n_labeled: 400,
            n_unlabeled: 800,
            band: Some(Band::High),
            seed: 1,
        }
    }
}

/// A generated problem with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub matrices: Vec<MisclassMatrix<f64>>,
    pub p_unlabeled: ClassProbs<f64>,
    pub p_labeled: ClassProbs<f64>,
    /// Per unlabeled record: true class, then one prediction per classifier.
    pub unlabeled: Vec<(usize, Vec<usize>)>,
    pub labeled: Vec<(usize, Vec<usize>)>,
}

impl SyntheticDataset {
    pub fn n_classes(&self) -> usize {
        self.p_unlabeled.len()
    }

    pub fn n_classifiers(&self) -> usize {
        self.matrices.len()
    }

    pub fn prediction_counts(&self, k: usize) -> PredictionCounts {
        PredictionCounts::from_labels(self.n_classes(), self.unlabeled.iter().map(|(_, a)| a[k]))
            .expect("generated labels are in range")
    }

    pub fn transfer_errors(&self, k: usize) -> TransferErrorMatrix {
        TransferErrorMatrix::from_pairs(self.n_classes(), self.labeled.iter().map(|(t, a)| (*t, a[k])))
            .expect("generated labels are in range")
    }

    pub fn ensemble_counts(&self) -> EnsembleCounts {
        EnsembleCounts::from_records(self.n_classes(), self.unlabeled.iter().map(|(_, a)| a.as_slice()))
            .expect("generated labels are in range")
    }

    pub fn ensemble_errors(&self) -> EnsembleTransferErrors {
        EnsembleTransferErrors::new((0..self.n_classifiers()).map(|k| self.transfer_errors(k)).collect())
            .expect("matrices share a class count")
    }
}

/// Draws `n` records by first drawing predicted labels from `q = M'p` and
/// then each true label from the column of Bayes weights
/// `m_ij p_i / q_j`. Returns `(true, predicted)` pairs.
pub fn generate_predictions(
    m: &MisclassMatrix<f64>,
    p: &ClassProbs<f64>,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>> {
    let c = p.len();
    if m.n_classes() != c {
        return Err(Error::Shape(format!("matrix has {} classes, p has {c}", m.n_classes())));
    }
    let alpha: Vec<Vec<f64>> = (0..c).map(|j| (0..c).map(|i| m.get(i, j) * p[i]).collect()).collect();
    let q: Vec<f64> = alpha.iter().map(|col| col.iter().sum()).collect();
    let q_total: f64 = q.iter().sum();
    (0..n)
        .map(|_| {
            let j = categorical(&q, q_total, rng);
            if !(q[j] > 0.0) {
                return Err(Error::DegenerateState(format!("predicted class {j} has zero probability")));
            }
            Ok((categorical(&alpha[j], q[j], rng), j))
        })
        .collect()
}

/// K classifiers whose predictions are independent given the true class:
/// the true class comes from `p`, then classifier `k` predicts from row
/// `true` of its own matrix.
pub fn generate_ensemble_predictions(
    ms: &[MisclassMatrix<f64>],
    p: &ClassProbs<f64>,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<(usize, Vec<usize>)>> {
    if ms.iter().any(|m| m.n_classes() != p.len()) {
        return Err(Error::Shape("matrices and p differ in class count".into()));
    }
    Ok((0..n)
        .map(|_| {
            let i = categorical(p.as_slice(), 1.0, rng);
            let preds = ms.iter().map(|m| categorical(m.row(i), 1.0, rng)).collect();
            (i, preds)
        })
        .collect())
}

/// Rejection-samples independent flat-Dirichlet pairs until
/// `CSMFA(p_L, p_U)` falls in `band`.
pub fn draw_scenario_pair(band: Band, c: usize, rng: &mut RngStream) -> Result<(ClassProbs<f64>, ClassProbs<f64>)> {
    let ones = vec![1.0; c];
    for _ in 0..REJECTION_BUDGET {
        let pl = draw_dirichlet(&ones, rng)?;
        let pu = draw_dirichlet(&ones, rng)?;
        if band.contains(csmf_accuracy(&pl, &pu)?) {
            return Ok((pl, pu));
        }
    }
    Err(Error::RejectionBudget(REJECTION_BUDGET))
}

/// Generates the unlabeled set from `(M, p_U)` and the labeled set from
/// `(M, p_L)`, with the same matrices for both.
pub fn build_dataset(spec: &ScenarioSpec) -> Result<SyntheticDataset> {
    if spec.matrices.is_empty() {
        return Err(Error::Input("scenario needs at least one classifier".into()));
    }
    let matrices: Vec<_> = spec.matrices.iter().map(MatrixChoice::matrix).collect();
    let c = matrices[0].n_classes();
    let mut pair_rng = RngStream::new(spec.seed, 0);
    let (p_labeled, p_unlabeled) = match spec.band {
        Some(b) => draw_scenario_pair(b, c, &mut pair_rng)?,
        None => {
            let mut draw = |src: &ProbSource| match src {
                ProbSource::Fixed(p) => Ok(p.clone()),
                ProbSource::Flat => draw_dirichlet(&vec![1.0; c], &mut pair_rng),
            };
            let pl = draw(&spec.p_labeled)?;
            (pl, draw(&spec.p_unlabeled)?)
        }
    };
    let gen = |p: &ClassProbs<f64>, n: usize, stream: u64| -> Result<Vec<(usize, Vec<usize>)>> {
        let mut rng = RngStream::new(spec.seed, stream);
        if matrices.len() == 1 {
            Ok(generate_predictions(&matrices[0], p, n, &mut rng)?
                .into_iter()
                .map(|(t, a)| (t, vec![a]))
                .collect())
        } else {
            generate_ensemble_predictions(&matrices, p, n, &mut rng)
        }
    };
    Ok(SyntheticDataset {
        unlabeled: gen(&p_unlabeled, spec.n_unlabeled, 1)?,
        labeled: gen(&p_labeled, spec.n_labeled, 2)?,
        matrices,
        p_unlabeled,
        p_labeled,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Naive,
    CalibratedSingle,
    CalibratedEnsembleIndependent,
    CalibratedEnsembleJoint,
    Map,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::CalibratedSingle => "calibrated-single",
            Self::CalibratedEnsembleIndependent => "calibrated-ensemble-independent",
            Self::CalibratedEnsembleJoint => "calibrated-ensemble-joint",
            Self::Map => "map",
        }
    }

    fn is_ensemble(self) -> bool {
        matches!(self, Self::CalibratedEnsembleIndependent | Self::CalibratedEnsembleJoint)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Self::Naive,
            Self::CalibratedSingle,
            Self::CalibratedEnsembleIndependent,
            Self::CalibratedEnsembleJoint,
            Self::Map,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Input(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOptions {
    pub hyper: Hyperparams<f64>,
    /// The seed field is ignored; each replicate derives its own.
    pub chain: ChainConfig,
    pub em: EmConfig,
    pub ccc_variant: CccVariant,
    /// Replicates run concurrently on up to this many threads.
    pub threads: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            chain: ChainConfig { n_burnin: 1000, n_samples: 2000, n_chains: 2, ..ChainConfig::default() },
            em: EmConfig::default(),
            ccc_variant: CccVariant::default(),
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

/// One line of the long-format results table. `class` is set for `bias`
/// rows only; `classifier` is set for methods that use one classifier.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub replicate: usize,
    pub method: &'static str,
    pub classifier: Option<usize>,
    pub metric: &'static str,
    pub class: Option<usize>,
    pub value: f64,
}

fn argmax(x: &[f64]) -> usize {
    (0..x.len()).fold(0, |b, i| if x[i] > x[b] { i } else { b })
}

fn score(
    out: &mut Vec<ResultRow>,
    rep: usize,
    method: Method,
    classifier: Option<usize>,
    est: &ClassProbs<f64>,
    assigned: Option<Vec<usize>>,
    data: &SyntheticDataset,
    opts: &ExperimentOptions,
) -> Result<()> {
    let mut push = |metric, class, value| {
        out.push(ResultRow { replicate: rep, method: method.name(), classifier, metric, class, value });
    };
    push("csmfa", None, csmf_accuracy(est, &data.p_unlabeled)?);
    for i in 0..est.len() {
        push("bias", Some(i), est[i] - data.p_unlabeled[i]);
    }
    if let Some(assigned) = assigned {
        let conf = ConfusionCounts::from_pairs(
            data.n_classes(),
            data.unlabeled.iter().zip(assigned).map(|((t, _), a)| (*t, a)),
        )?;
        // undefined when a class never occurs in U; the row is left out
        if let Ok(v) = ccc(&conf, opts.ccc_variant) {
            push("ccc", None, v);
        }
    }
    Ok(())
}

fn run_replicate(
    spec: &ScenarioSpec,
    rep: usize,
    methods: &[Method],
    opts: &ExperimentOptions,
) -> Result<Vec<ResultRow>> {
    let seed = derive_seed(spec.seed, rep as u64);
    let data = build_dataset(&ScenarioSpec { seed, ..spec.clone() })?;
    let chain = ChainConfig { seed: derive_seed(seed, 0xC4A1), ..opts.chain.clone() };
    let hp = &opts.hyper;
    let c = data.n_classes();
    let mut rows = Vec::new();
    for &method in methods {
        if method.is_ensemble() {
            let counts = data.ensemble_counts();
            let errors = data.ensemble_errors();
            let s = if method == Method::CalibratedEnsembleJoint {
                run_joint(&counts, &errors, hp, &chain)?
            } else {
                run_independent(&counts, &errors, hp, &chain)?
            };
            let patterns: Vec<Vec<usize>> = data.unlabeled.iter().map(|(_, a)| a.clone()).collect();
            let assigned = individual_posteriors(&patterns, &s, true)
                .map(|r| r.iter().map(|x| argmax(&x.probs)).collect())
                .ok();
            let est = ClassProbs::from_weights(s.mean("p"))?;
            score(&mut rows, rep, method, None, &est, assigned, &data, opts)?;
            continue;
        }
        for k in 0..data.n_classifiers() {
            let v = data.prediction_counts(k);
            let preds: Vec<usize> = data.unlabeled.iter().map(|(_, a)| a[k]).collect();
            let (est, assigned) = match method {
                Method::Naive => (naive_estimate(&v)?, Some(preds)),
                Method::CalibratedSingle => {
                    let s = run_chain(&v, &data.transfer_errors(k), hp, &chain)?;
                    let patterns: Vec<Vec<usize>> = preds.iter().map(|&j| vec![j]).collect();
                    let assigned = individual_posteriors(&patterns, &s, false)
                        .map(|r| r.iter().map(|x| argmax(&x.probs)).collect())
                        .ok();
                    (ClassProbs::from_weights(s.mean("p"))?, assigned)
                }
                Method::Map => {
                    let fit = run_em(&v, &data.transfer_errors(k), hp, &opts.em)?;
                    let st = &fit.state;
                    let assigned = preds
                        .iter()
                        .map(|&j| argmax(&(0..c).map(|i| st.m.get(i, j) * st.p[i]).collect::<Vec<_>>()))
                        .collect();
                    (st.p.clone(), Some(assigned))
                }
                _ => unreachable!("ensemble methods handled above"),
            };
            score(&mut rows, rep, method, Some(k), &est, assigned, &data, opts)?;
        }
    }
    Ok(rows)
}

/// Scores every method on `replicates` independently seeded datasets drawn
/// from `spec`. Rows come back ordered by replicate, then method.
pub fn run_experiment(
    spec: &ScenarioSpec,
    replicates: usize,
    methods: &[Method],
    opts: &ExperimentOptions,
) -> Result<Vec<ResultRow>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<ResultRow>>>>> = Mutex::new((0..replicates).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..opts.threads.max(1).min(replicates.max(1)) {
            s.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::Relaxed);
                if r >= replicates {
                    break;
                }
                let out = run_replicate(spec, r, methods, opts);
                results.lock().expect("no thread panics while holding the lock")[r] = Some(out);
            });
        }
    });
    let mut rows = Vec::new();
    for r in results.into_inner().expect("lock not poisoned") {
        rows.extend(r.expect("every replicate ran")?);
    }
    Ok(rows)
}

/// Mean of `metric` over replicates for one method and classifier.
pub fn mean_metric(rows: &[ResultRow], method: Method, classifier: Option<usize>, metric: &str) -> Option<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method.name() && r.classifier == classifier && r.metric == metric)
        .map(|r| r.value)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_matrices_are_stochastic() {
        for m in [MatrixChoice::M1, MatrixChoice::M2, MatrixChoice::M3] {
            let m = m.matrix();
            for i in 0..4 {
                assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
        }
        assert_eq!(MatrixChoice::M3.matrix().get(0, 0), 0.7);
    }

    #[test]
    fn perfect_classifier_keeps_labels() {
        let mut rng = RngStream::new(1, 0);
        let recs = generate_predictions(&MatrixChoice::M1.matrix(), &ClassProbs::uniform(4), 1000, &mut rng).unwrap();
        assert!(recs.iter().all(|(t, a)| t == a));
    }

    #[test]
    fn m2_bayes_column() {
        let mut rng = RngStream::new(2, 0);
        let recs = generate_predictions(&MatrixChoice::M2.matrix(), &ClassProbs::uniform(4), 200_000, &mut rng).unwrap();
        let col0: Vec<_> = recs.iter().filter(|(_, a)| *a == 0).collect();
        let f = col0.iter().filter(|(t, _)| *t == 0).count() as f64 / col0.len() as f64;
        assert!((f - 1.0 / 1.65).abs() < 0.005);
        assert!(col0.iter().all(|(t, _)| *t < 2));
    }

    fn conditional_fidelity(recs: &[(usize, usize)], m: &MisclassMatrix<f64>, p: &ClassProbs<f64>) {
        let n = recs.len() as f64;
        let mut joint = [[0.0; 4]; 4];
        for &(t, a) in recs {
            joint[t][a] += 1.0;
        }
        for i in 0..4 {
            let row: f64 = joint[i].iter().sum();
            assert!((row / n - p[i]).abs() < 0.01);
            for (j, &x) in joint[i].iter().enumerate() {
                assert!((x / row - m.get(i, j)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn generated_records_follow_m_and_p() {
        let p = ClassProbs::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let m3 = MatrixChoice::M3.matrix();
        let recs = generate_predictions(&m3, &p, 100_000, &mut RngStream::new(3, 0)).unwrap();
        conditional_fidelity(&recs, &m3, &p);
        let recs = generate_ensemble_predictions(&[m3.clone(), MatrixChoice::M2.matrix()], &p, 100_000, &mut RngStream::new(4, 0))
            .unwrap();
        let first: Vec<_> = recs.iter().map(|(t, a)| (*t, a[0])).collect();
        conditional_fidelity(&first, &m3, &p);
    }

    #[test]
    fn scenario_pairs_respect_band() {
        let mut rng = RngStream::new(5, 0);
        let mut sums = [0.0; 4];
        for band in [Band::Low, Band::Medium, Band::High] {
            for _ in 0..300 {
                let (pl, pu) = draw_scenario_pair(band, 4, &mut rng).unwrap();
                assert!(band.contains(csmf_accuracy(&pl, &pu).unwrap()));
                if band == Band::High {
                    for i in 0..4 {
                        sums[i] += pu[i];
                    }
                }
            }
        }
        // no class is favoured
        for s in sums {
            assert!((s / 300.0 - 0.25).abs() < 0.03, "{sums:?}");
        }
    }

    #[test]
    fn datasets_are_reproducible_and_m1_is_diagonal() {
        let spec = ScenarioSpec { matrices: vec![MatrixChoice::M1], ..ScenarioSpec::default() };
        let a = build_dataset(&spec).unwrap();
        assert_eq!(a, build_dataset(&spec).unwrap());
        assert!(a.transfer_errors(0).is_diagonal());
        assert_eq!(a.unlabeled.len(), 800);
        assert_eq!(a.labeled.len(), 400);
    }

    #[test]
    fn zero_replicates_is_empty() {
        let rows = run_experiment(&ScenarioSpec::default(), 0, &[Method::Naive], &ExperimentOptions::default()).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn method_names_round_trip() {
        for m in ["naive", "calibrated-single", "calibrated-ensemble-independent", "calibrated-ensemble-joint", "map"] {
            assert_eq!(m.parse::<Method>().unwrap().name(), m);
        }
    }
}
