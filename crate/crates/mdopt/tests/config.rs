use mdopt::config::{DataSource, ExperimentConfig, SweepGrid};
use mdopt::core::strategy::Strategy;
use mdopt::Error;

#[test]
fn defaults_are_the_bundled_benchmark() {
    let c = ExperimentConfig::default();
    match &c.data {
        DataSource::Synthetic(s) => {
            assert_eq!(s.n_domains, 6);
            assert_eq!(s.conflict_strength, 0.8);
        }
        DataSource::File(_) => panic!("default must be synthetic"),
    }
    assert_eq!(c.train.strategy, Strategy::Mamdr);
    c.validate().unwrap();
}

#[test]
fn keys_override_defaults_and_comments_are_ignored() {
    let c = ExperimentConfig::parse(
        "# a comment\n\nmodel.embed_dim = 32\nmodel.hidden=128, 64\ntrain.strategy = pcgrad\nrun.seeds = 3,4,5\nsynthetic.n_domains = 4\n",
    )
    .unwrap();
    assert_eq!(c.embed_dim, 32);
    assert_eq!(c.hidden, vec![128, 64]);
    assert_eq!(c.train.strategy, Strategy::PcGrad);
    assert_eq!(c.seeds, vec![3, 4, 5]);
    assert_eq!(c.train.seed, 3);
    match c.data {
        DataSource::Synthetic(s) => assert_eq!(s.n_domains, 4),
        DataSource::File(_) => panic!(),
    }
}

#[test]
fn rendered_text_parses_back_to_the_same_config() {
    let mut c = ExperimentConfig::parse("train.alpha = 0.02\nsweep.alpha = 0.1,0.001\nsweep.k = 1,2\nrun.seeds = 7,8").unwrap();
    c.train.beta = 0.25;
    assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    let f = ExperimentConfig::parse("data.path = /tmp/x.csv").unwrap();
    assert_eq!(ExperimentConfig::parse(&f.to_text()).unwrap(), f);
}

#[test]
fn malformed_input_names_the_line() {
    let err = ExperimentConfig::parse("train.alpha = 0.1\nnot a pair\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    let err = ExperimentConfig::parse("train.k = 1\ntrain.k = 2\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }));
    let err = ExperimentConfig::parse("train.bogus = 1").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 1, .. }));
    assert!(ExperimentConfig::parse("train.strategy = nope").is_err());
    assert!(ExperimentConfig::parse("train.alpha = abc").is_err());
}

#[test]
fn exactly_one_data_source() {
    assert!(ExperimentConfig::parse("data.path = a.csv\nsynthetic.seed = 2").is_err());
}

#[test]
fn invalid_values_are_rejected() {
    assert!(ExperimentConfig::parse("train.beta = 0").is_err());
    assert!(ExperimentConfig::parse("train.k = 0").is_err());
    assert!(ExperimentConfig::parse("model.embed_dim = 0").is_err());
    assert!(ExperimentConfig::parse("run.seeds = ").is_err());
}

#[test]
fn sweep_grid_parsing() {
    let g = SweepGrid::parse("alpha=1e-1,1e-3; beta=0.1").unwrap();
    assert_eq!(g.alpha, vec![0.1, 0.001]);
    assert_eq!(g.beta, vec![0.1]);
    assert!(g.k.is_empty());
    assert!(SweepGrid::parse("").unwrap().is_empty());
    assert!(SweepGrid::parse("delta=1").is_err());
    assert!(SweepGrid::parse("alpha").is_err());
}
