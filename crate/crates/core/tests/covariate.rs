use vacalib::covariate::{run_covariate_chain, DesignMatrix, RegressionPrior, StratifiedCounts};
use vacalib::gibbs::single::run_chain;
use vacalib::gibbs::ChainConfig;
use vacalib::model::{Hyperparams, PredictionCounts, TransferErrorMatrix};

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn cfg(seed: u64) -> ChainConfig {
    ChainConfig { n_burnin: 1000, n_samples: 3000, n_chains: 2, seed, ..ChainConfig::default() }
}

#[test]
fn intercept_only_two_classes_matches_quadrature() {
    // with M pinned near the identity the allocation is v itself, so p_0 =
    // logistic(beta) has a binomial-logit posterior under the N(0, 100) prior
    let counts = StratifiedCounts::new(1, 2, vec![70, 30]).unwrap();
    let t = TransferErrorMatrix::diagonal(&[100_000, 100_000]);
    let prior = RegressionPrior::isotropic(1, 2, 100.0);
    let s = run_covariate_chain(&counts, &DesignMatrix::intercept_only(), &t, &Hyperparams::default(), &prior, &cfg(1))
        .unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    let h = 1e-3;
    for k in 0..20_000 {
        let b = -10.0 + h * k as f64;
        let p = 1.0 / (1.0 + (-b).exp());
        let w = (70.0 * p.ln() + 30.0 * (1.0 - p).ln() - b * b / 200.0).exp();
        num += w * p;
        den += w;
    }
    let exact = num / den;
    let got: f64 = s.mean("p")[0];
    assert!((got - exact).abs() < 0.005, "{got} vs {exact}");
}

#[test]
fn intercept_only_agrees_with_single_classifier_model() {
    let v = [2000u64, 1500, 1000, 500];
    let t = [8, 1, 1, 0, 1, 7, 1, 1, 0, 2, 6, 2, 1, 1, 1, 7].map(|x| x * 50);
    let t = TransferErrorMatrix::new(4, t.to_vec()).unwrap();
    let hp = Hyperparams::default();
    let single = run_chain(&PredictionCounts::new(v.to_vec()), &t, &hp, &cfg(2)).unwrap().mean("p");
    let counts = StratifiedCounts::new(1, 4, v.to_vec()).unwrap();
    let prior = RegressionPrior::isotropic(1, 4, 100.0);
    let cov = run_covariate_chain(&counts, &DesignMatrix::intercept_only(), &t, &hp, &prior, &cfg(3)).unwrap();
    let d = l1(&cov.mean("p"), &single);
    assert!(d < 0.02, "L1 {d}");
}

#[test]
fn two_groups_recover_their_own_proportions() {
    let counts = StratifiedCounts::new(2, 4, vec![80, 20, 0, 0, 20, 80, 0, 0]).unwrap();
    let design = DesignMatrix::new(2, 2, vec![1.0, 0.0, 1.0, 1.0], vec!["intercept".into(), "g2".into()]).unwrap();
    let t = TransferErrorMatrix::diagonal(&[100_000; 4]);
    let prior = RegressionPrior::isotropic(2, 4, 100.0);
    let s = run_covariate_chain(&counts, &design, &t, &Hyperparams::default(), &prior, &cfg(4)).unwrap();
    let pg: Vec<f64> = s.mean("p_group");
    assert!((pg[0] - 0.8).abs() < 0.03, "{pg:?}");
    assert!((pg[4] - 0.2).abs() < 0.03, "{pg:?}");
    // marginal is the size-weighted average of the groups, draw by draw
    let p = s.mean("p");
    for i in 0..4 {
        assert!((p[i] - 0.5 * (pg[i] + pg[4 + i])).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_output() {
    let counts = StratifiedCounts::new(2, 3, vec![10, 5, 3, 2, 9, 4]).unwrap();
    let design = DesignMatrix::new(2, 2, vec![1.0, 0.0, 1.0, 1.0], vec!["intercept".into(), "g2".into()]).unwrap();
    let t = TransferErrorMatrix::new(3, vec![5, 1, 0, 1, 4, 1, 0, 1, 5]).unwrap();
    let prior = RegressionPrior::isotropic(2, 3, 100.0);
    let c = ChainConfig { n_burnin: 50, n_samples: 50, ..cfg(5) };
    let a = run_covariate_chain::<f64>(&counts, &design, &t, &Hyperparams::default(), &prior, &c).unwrap();
    let b = run_covariate_chain::<f64>(&counts, &design, &t, &Hyperparams::default(), &prior, &c).unwrap();
    assert!(a.draws().zip(b.draws()).all(|(x, y)| x == y));
}
