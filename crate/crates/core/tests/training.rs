use kkl::analysis::network_lipschitz;
use kkl::dynamics::lorenz_system;
use kkl::lipnet::{backward, init_params};
use kkl::numcore::{dist2, RngState};
use kkl::observer::{
    build_dataset, default_observer, estimate_states, DataSpec, DatasetMeta, PairedDataset, Record,
};
use kkl::training::{mse, split_for_config, train, TrainConfig};

fn synthetic(records: Vec<Record>) -> PairedDataset {
    let m = records.len();
    PairedDataset {
        records,
        meta: DatasetMeta {
            system: "synthetic".into(),
            sigma: 0.0,
            seed: 0,
            stream: 0,
            t_burn: 0.0,
            t_end: 1.0,
            dt: 0.01,
            m,
            x0: vec![],
            observer_a: vec![],
            observer_b: vec![],
            observer_z0: vec![],
        },
    }
}

fn disk_points(n: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
        if p[0] * p[0] + p[1] * p[1] <= 1.0 {
            out.push(p);
        }
    }
    out
}

#[test]
fn zero_targets_contract() {
    let mut rng = RngState::new(11);
    let ds = synthetic(
        (0..500)
            .map(|i| Record {
                t: i as f64,
                x: vec![0.0; 3],
                z: rng.gaussian(4),
            })
            .collect(),
    );
    let cfg = TrainConfig {
        epochs: 50,
        seed: 5,
        ..TrainConfig::default()
    };
    let (_, h) = train(&ds, &cfg).unwrap();
    assert_eq!(h.train_loss.len(), 50);
    assert!(h.initial_train_loss > 0.0);
    assert!(
        h.final_train_loss() <= 0.1 * h.initial_train_loss,
        "{} vs {}",
        h.final_train_loss(),
        h.initial_train_loss
    );
}

#[test]
fn half_identity_is_learned() {
    let mut rng = RngState::new(12);
    let ds = synthetic(
        disk_points(2000, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, z)| Record {
                t: i as f64,
                x: z.iter().map(|v| 0.5 * v).collect(),
                z,
            })
            .collect(),
    );
    let cfg = TrainConfig {
        gamma: 10.0,
        ..TrainConfig::default()
    };
    let (_, h) = train(&ds, &cfg).unwrap();
    assert!(h.val_loss <= 1e-2, "validation loss {}", h.val_loss);
}

#[test]
fn small_step_decreases_single_record_loss() {
    let mut rng = RngState::new(13);
    for _ in 0..20 {
        let mut p = init_params(&[4, 8, 8, 3], 2, 10.0, &mut rng).unwrap();
        let z = rng.gaussian(4);
        let x = rng.gaussian(3);
        let batch = [(z.as_slice(), x.as_slice())];
        let (before, g) = backward(&p, &batch).unwrap();
        p.add_scaled(-1e-6, &g);
        let (after, _) = backward(&p, &batch).unwrap();
        assert!(after < before, "{after} >= {before}");
    }
}

fn lorenz_dataset(seed: u64, sigma: f64) -> PairedDataset {
    let spec = DataSpec {
        sigma,
        ..DataSpec::default()
    };
    build_dataset(
        &lorenz_system(),
        &default_observer(),
        &spec,
        &mut RngState::new(seed),
    )
    .unwrap()
}

#[test]
fn training_is_reproducible() {
    let ds = lorenz_dataset(1, 0.0);
    let cfg = TrainConfig {
        epochs: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    let (p1, h1) = train(&ds, &cfg).unwrap();
    let (p2, h2) = train(&ds, &cfg).unwrap();
    assert_eq!(p1.to_json().unwrap(), p2.to_json().unwrap());
    assert_eq!(h1.train_loss, h2.train_loss);
    assert_eq!(h1.val_loss.to_bits(), h2.val_loss.to_bits());
}

#[test]
fn case_study_noiseless_gamma_100() {
    let ds = lorenz_dataset(0, 0.0);
    let cfg = TrainConfig {
        gamma: 100.0,
        ..TrainConfig::default()
    };
    let (p, h) = train(&ds, &cfg).unwrap();
    let (tr, va) = (h.final_train_loss(), h.val_loss);
    assert!(tr.is_finite() && va.is_finite());
    assert!(va <= 3.0 * tr && tr <= 3.0 * va, "train {tr}, val {va}");
    assert!(tr < h.initial_train_loss);

    let (train_set, _) = split_for_config(&ds, &cfg).unwrap();
    assert_eq!(mse(&p, &train_set).unwrap(), tr);
    let zs: Vec<Vec<f64>> = train_set.records.iter().map(|r| r.z.clone()).collect();
    let est = estimate_states(&p, &zs).unwrap();
    let recomputed = est
        .iter()
        .zip(&train_set.records)
        .map(|(e, r)| dist2(e, &r.x).powi(2))
        .sum::<f64>()
        / est.len() as f64;
    assert!((recomputed - tr).abs() <= 1e-12 * tr.max(1.0));

    let lip = network_lipschitz(&p, &zs, 10_000, &mut RngState::new(1)).unwrap();
    assert!(lip > 0.0 && lip <= 100.0 * (1.0 + 1e-6), "L_S = {lip}");
}
