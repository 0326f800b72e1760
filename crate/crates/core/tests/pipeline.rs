use ndarray::Array2;
use trustlab::data::{corrupt, gen_blobs, split_trusted, true_label_reads, Dataset, EnrichedDataset, LabelKind};
use trustlab::experiment::{run_cells, ExperimentConfig};
use trustlab::expertnet::{infer_labels, train_expertnet, ExpertNetConfig};
use trustlab::nn::{evaluate, TrainConfig};
use trustlab::noise::{build_transition, NoiseSpec};
use trustlab::training::{train_baseline, train_trustnet, BaselineConfig, ClassifierConfig, Method};

fn classifier(epochs: usize) -> ClassifierConfig {
    ClassifierConfig {
        hidden: vec![32],
        train: TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 0.05,
            ..TrainConfig::default()
        },
    }
}

fn expertnet(epochs: usize) -> ExpertNetConfig {
    ExpertNetConfig {
        amateur_hidden: vec![32],
        expert_width: 32,
        train: TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 0.05,
            ..TrainConfig::default()
        },
    }
}

fn blobs(c: usize, n: usize, seed: u64) -> (Dataset, Dataset) {
    (gen_blobs(c, 8, n, 6.0, seed).unwrap(), gen_blobs(c, 8, 100, 6.0, seed).unwrap())
}

fn noisy(ds: &Dataset, spec: &NoiseSpec, seed: u64) -> Dataset {
    corrupt(ds, &build_transition(spec, ds.num_classes()).unwrap(), seed).unwrap()
}

/// Inferred distributions equal to the one-hot true labels.
fn oracle_enrichment(ds: &Dataset) -> EnrichedDataset {
    let truth = ds.true_labels().unwrap();
    let mut probs = Array2::zeros((ds.len(), ds.num_classes()));
    for (k, &y) in truth.iter().enumerate() {
        probs[[k, y]] = 1.0;
    }
    EnrichedDataset::new(ds.features().to_owned(), ds.given_labels().to_vec(), probs, ds.num_classes()).unwrap()
}

fn agreement(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[test]
fn robust_training_path_never_reads_true_labels() {
    let (train, test) = blobs(4, 120, 1);
    let train = noisy(&train, &NoiseSpec::Symmetric { epsilon: 0.3 }, 2);
    let (trusted, untrusted) = split_trusted(&train, 0.2, 3).unwrap();
    let pair = train_expertnet(&trusted, &expertnet(5), 4).unwrap();
    let untrusted = untrusted.without_true_labels();
    let test = test.without_true_labels();

    let before = true_label_reads();
    let enriched = infer_labels(&pair, &untrusted).unwrap();
    train_trustnet(&enriched, &classifier(3), 5, Some(&test), true).unwrap();
    assert_eq!(true_label_reads(), before);

    // the counter does see a read when one happens
    let (_, labelled) = blobs(4, 10, 1);
    evaluate(&train_trustnet(&enriched, &classifier(1), 5, None, false).unwrap().network, &labelled, LabelKind::True)
        .unwrap();
    assert!(true_label_reads() > before);
}

#[test]
fn expertnet_recovers_clean_labels() {
    let (train, _) = blobs(4, 200, 7);
    let (trusted, untrusted) = split_trusted(&train, 0.2, 1).unwrap();
    let pair = train_expertnet(&trusted, &expertnet(40), 2).unwrap();
    let enriched = infer_labels(&pair, &untrusted.without_true_labels()).unwrap();
    let acc = agreement(enriched.inferred_labels(), untrusted.true_labels().unwrap());
    assert!(acc >= 0.95, "agreement {acc}");
}

#[test]
fn expertnet_inverts_a_pure_swap() {
    let (train, _) = blobs(4, 200, 8);
    let spec = NoiseSpec::PartialTargeted {
        epsilon: 1.0,
        mapping: vec![(0, 1), (1, 0)],
    };
    let train = noisy(&train, &spec, 3);
    let (trusted, untrusted) = split_trusted(&train, 0.2, 1).unwrap();
    let pair = train_expertnet(&trusted, &expertnet(40), 2).unwrap();
    let enriched = infer_labels(&pair, &untrusted.without_true_labels()).unwrap();
    let truth = untrusted.true_labels().unwrap();
    let score = |keep: &dyn Fn(usize) -> bool| {
        let (mut hit, mut n) = (0, 0);
        for (k, &y) in truth.iter().enumerate().filter(|(_, &y)| keep(y)) {
            hit += usize::from(enriched.inferred_labels()[k] == y);
            n += 1;
        }
        hit as f64 / n as f64
    };
    let swapped = score(&|y| y < 2);
    let untouched = score(&|y| y >= 2);
    assert!(swapped >= 0.9, "swapped classes {swapped}");
    assert!(untouched >= 0.95, "untouched classes {untouched}");
}

#[test]
fn without_noise_robust_training_tracks_cross_entropy() {
    let (train, test) = blobs(4, 150, 9);
    let (trusted, untrusted) = split_trusted(&train, 0.2, 1).unwrap();
    let pair = train_expertnet(&trusted, &expertnet(30), 2).unwrap();
    let enriched = infer_labels(&pair, &untrusted.without_true_labels()).unwrap();
    let cfg = classifier(20);
    let robust = train_trustnet(&enriched, &cfg, 3, Some(&test), false).unwrap();
    let ce = train_baseline(Method::Ce, &untrusted, &cfg, &BaselineConfig::default(), None, 3, Some(&test)).unwrap();
    let r = robust.metrics.last().unwrap().clean_acc.unwrap();
    let c = ce.metrics.last().unwrap().clean_acc.unwrap();
    assert!((r - c).abs() <= 0.01, "robust {r} vs ce {c}");
    assert!(c >= 0.98, "clean-data ce {c}");
}

#[test]
fn alpha_trace_stays_in_the_unit_interval() {
    let (train, _) = blobs(3, 80, 4);
    let train = noisy(&train, &NoiseSpec::Symmetric { epsilon: 0.4 }, 1);
    let (trusted, untrusted) = split_trusted(&train, 0.25, 1).unwrap();
    let pair = train_expertnet(&trusted, &expertnet(10), 2).unwrap();
    let enriched = infer_labels(&pair, &untrusted.without_true_labels()).unwrap();
    let out = train_trustnet(&enriched, &classifier(6), 3, None, true).unwrap();
    let trace = out.alpha_trace.unwrap();
    assert_eq!(trace.len(), enriched.len() * 7);

    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(&buf[..]);
    assert_eq!(rd.headers().unwrap(), vec!["epoch", "sample", "alpha", "entropy"]);
    for rec in rd.records() {
        let rec = rec.unwrap();
        let a: f64 = rec[2].parse().unwrap();
        let s: f64 = rec[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&s));
    }
    for m in &out.metrics {
        let a = m.mean_alpha.unwrap();
        assert!((0.0..=1.0).contains(&a));
        assert!(m.mean_entropy.is_some());
    }
}

#[test]
fn training_is_deterministic_and_outputs_distributions() {
    let (train, test) = blobs(3, 60, 5);
    let train = noisy(&train, &NoiseSpec::Symmetric { epsilon: 0.2 }, 1);
    let enriched = oracle_enrichment(&train);
    let a = train_trustnet(&enriched, &classifier(4), 9, Some(&test), false).unwrap();
    let b = train_trustnet(&enriched, &classifier(4), 9, Some(&test), false).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(a.metrics, b.metrics);
    let probs = a.network.forward(test.features()).unwrap();
    for row in probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn an_oracle_expert_beats_cross_entropy_under_symmetric_noise() {
    let mut gaps = Vec::new();
    for seed in 0..3 {
        let (train, test) = blobs(5, 150, 20 + seed);
        let train = noisy(&train, &NoiseSpec::Symmetric { epsilon: 0.4 }, seed);
        let cfg = ClassifierConfig {
            hidden: vec![128],
            train: TrainConfig {
                epochs: 60,
                batch_size: 32,
                learning_rate: 0.1,
                weight_decay: 0.0,
                ..TrainConfig::default()
            },
        };
        let robust = train_trustnet(&oracle_enrichment(&train), &cfg, seed, Some(&test), false).unwrap();
        let ce = train_baseline(Method::Ce, &train, &cfg, &BaselineConfig::default(), None, seed, Some(&test)).unwrap();
        gaps.push(robust.metrics.last().unwrap().clean_acc.unwrap() - ce.metrics.last().unwrap().clean_acc.unwrap());
    }
    gaps.sort_by(f64::total_cmp);
    assert!(gaps[1] > 0.0, "gaps {gaps:?}");
}

#[test]
fn comparison_produces_one_row_per_cell() {
    let cfg = ExperimentConfig {
        dataset: trustlab::experiment::DatasetSpec {
            classes: 3,
            dim: 8,
            train_per_class: 100,
            test_per_class: 50,
            separation: 6.0,
        },
        noise: NoiseSpec::Symmetric { epsilon: 0.0 },
        epsilons: vec![0.0, 0.3],
        methods: Method::ALL.to_vec(),
        seeds: vec![0, 1],
        classifier: classifier(40),
        expertnet: expertnet(10),
        ..ExperimentConfig::default()
    };
    let cells = cfg.cells().unwrap();
    let rows = run_cells(&cfg, &cells, |_| Ok(())).unwrap();
    assert_eq!(rows.len(), 2 * 2 * Method::ALL.len());
    for row in rows.iter().filter(|r| r.epsilon == 0.0 && r.method == Method::Ce) {
        assert!(row.clean_acc >= 0.98, "{row:?}");
    }
}
