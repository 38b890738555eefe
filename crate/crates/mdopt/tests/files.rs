use mdopt::checkpoint::Checkpoint;
use mdopt::core::data::{split, SplitFractions};
use mdopt::core::model::{init_params, Activation, ModelSpec};
use mdopt::core::optim::OptimizerKind;
use mdopt::core::strategy::{run_epoch, MdrState, Strategy, TrainConfig};
use mdopt::core::objective::NeuralObjective;
use mdopt::core::synth::{generate, SyntheticSpec};
use mdopt::dataset::{read_dataset, write_dataset, write_metadata};
use mdopt::Error;

fn data() -> mdopt::core::data::MultiDomainDataset {
    let spec = SyntheticSpec {
        n_domains: 3,
        users_per_domain: 20,
        items_per_domain: 15,
        positives_per_user: 2,
        seed: 4,
        ..SyntheticSpec::default()
    };
    split(&generate(&spec).unwrap(), SplitFractions::default(), 1).unwrap()
}

#[test]
fn dataset_round_trip_is_lossless() {
    let d = data();
    let mut buf = Vec::new();
    write_dataset(&d, &mut buf).unwrap();
    let back = read_dataset(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back, d);
}

#[test]
fn id_space_is_inferred_without_the_comment_line() {
    let text = "domain_id,user_id,item_id,label,split\n0,3,1,1,train\n1,0,4,0,test\n";
    let d = read_dataset(text).unwrap();
    assert_eq!((d.num_users, d.num_items), (4, 5));
    assert_eq!(d.num_domains(), 2);
}

#[test]
fn bad_rows_report_their_line() {
    let cases = [
        "domain_id,user_id,item_id,label,split\n0,1,1,2,train\n",
        "domain_id,user_id,item_id,label,split\n0,1,1,1,holdout\n",
        "domain_id,user_id,item_id,label,split\n0,x,1,1,train\n",
    ];
    for text in cases {
        assert!(matches!(read_dataset(text), Err(Error::Parse { line: 2, .. })), "{text}");
    }
    let out_of_range = "# num_users=2 num_items=2\ndomain_id,user_id,item_id,label,split\n0,0,0,1,train\n0,5,0,1,train\n";
    assert!(matches!(read_dataset(out_of_range), Err(Error::Parse { line: 4, .. })));
    assert!(read_dataset("a,b\n1,2\n").is_err());
    assert!(read_dataset("domain_id,user_id,item_id,label,split\n").is_err());
    assert!(read_dataset("domain_id,user_id,item_id,label,split\n1,0,0,1,train\n").is_err());
}

#[test]
fn metadata_has_one_row_per_domain_with_ratio() {
    let d = data();
    let mut buf = Vec::new();
    write_metadata(&d, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("domain_id,n_pos,n_neg,ctr_ratio"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let ratio: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!((0.2..=0.5).contains(&ratio), "{row}");
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let d = data();
    let mut spec = ModelSpec::new(d.num_users, d.num_items, 4, vec![6, 3]);
    spec.activation = Activation::Tanh;
    spec.seed = 9;
    let cfg = TrainConfig {
        strategy: Strategy::Mamdr,
        optimizer: OptimizerKind::Adam,
        k: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let obj = NeuralObjective::new(&spec, &d).unwrap();
    let state = run_epoch(&MdrState::new(init_params(&spec, 9).unwrap(), 3, &cfg), &obj, &cfg)
        .unwrap()
        .state;
    let ckpt = Checkpoint {
        spec: spec.clone(),
        strategy: Strategy::Mamdr,
        state,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.spec, spec);
    assert_eq!(back.strategy, Strategy::Mamdr);
    assert!(back.state.bit_eq(&ckpt.state));
    let opts = |s: &MdrState| {
        let mut all = vec![&s.shared_opt];
        all.extend(&s.specific_opt);
        all.iter()
            .map(|o| {
                let (m1, m2) = o.moments.as_ref().unwrap();
                (o.step_count, o.lr.to_bits(), m1.values().to_vec(), m2.values().to_vec())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(opts(&back.state), opts(&ckpt.state));
    assert_eq!(back.state.loss_weights, ckpt.state.loss_weights);

    let bytes = ckpt.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut newer = bytes.clone();
    newer[8] = 99;
    assert!(Checkpoint::from_bytes(&newer).is_err());
    let mut longer = bytes;
    longer.push(0);
    assert!(Checkpoint::from_bytes(&longer).is_err());
}
