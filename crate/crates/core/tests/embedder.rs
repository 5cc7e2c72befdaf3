use ndarray::Array2;
use popsynth::data::{encode, AttributeSchema, Record};
use popsynth::diffcore::rng_from_seed;
use popsynth::embedder::{random_block_mask, train_embedder, EmbedderSpec};
use rand::Rng;

fn spec(seed: u64) -> EmbedderSpec {
    EmbedderSpec {
        dim: 8,
        hidden: vec![32],
        epochs: 60,
        lr: 5e-3,
        batch_size: 64,
        seed,
        ..EmbedderSpec::default()
    }
}

// b is a fixed permutation of a; c is independent noise
fn dependent(n: usize, seed: u64) -> Vec<Record> {
    let perm = [2u16, 0, 4, 1, 3];
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..5u16);
            Record::new(vec![a, perm[a as usize], rng.random_range(0..3u16)])
        })
        .collect()
}

#[test]
fn learns_a_deterministic_dependency() {
    let schema = AttributeSchema::from_cardinalities(&[5, 5, 3]).unwrap();
    let train = encode(&dependent(2000, 1), &schema).unwrap();
    let (embedder, report) = train_embedder(&train, &schema, &spec(3)).unwrap();
    assert!(report.epochs_run >= 1);

    let test = encode(&dependent(500, 2), &schema).unwrap();
    let mut mask = Array2::zeros((500, 13));
    mask.slice_mut(ndarray::s![.., 5..10]).fill(1.0);
    let acc = embedder.masked_accuracy(test.values(), &mask).unwrap();
    assert!(acc > 0.95, "accuracy on the dependent attribute: {acc}");
}

#[test]
fn independent_attributes_stay_near_the_majority_baseline() {
    let schema = AttributeSchema::from_cardinalities(&[3, 4, 2, 3]).unwrap();
    let mut rng = rng_from_seed(5);
    let cards = [3u16, 4, 2, 3];
    let gen = |rng: &mut popsynth::diffcore::SeededRng, n: usize| -> Vec<Record> {
        (0..n)
            .map(|_| Record::new(cards.iter().map(|&c| rng.random_range(0..c)).collect()))
            .collect()
    };
    let train_recs = gen(&mut rng, 3000);
    let test_recs = gen(&mut rng, 1000);
    let train = encode(&train_recs, &schema).unwrap();
    let (embedder, _) = train_embedder(&train, &schema, &spec(6)).unwrap();

    let test = encode(&test_recs, &schema).unwrap();
    let mask = random_block_mask(1000, &[3, 4, 2, 3], 1, &mut rng);
    let acc = embedder.masked_accuracy(test.values(), &mask).unwrap();

    // oracle: predict each masked attribute's training majority
    let mut hit = 0usize;
    let offsets = [0, 3, 7, 9];
    for (r, rec) in test_recs.iter().enumerate() {
        for k in 0..4 {
            if mask[[r, offsets[k]]] == 1.0 {
                let mut counts = vec![0usize; cards[k] as usize];
                for t in &train_recs {
                    counts[t.get(k)] += 1;
                }
                let majority =
                    (0..counts.len()).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
                hit += usize::from(rec.get(k) == majority);
            }
        }
    }
    let baseline = hit as f64 / 1000.0;
    assert!(
        (acc - baseline).abs() < 0.05,
        "accuracy {acc} vs baseline {baseline}"
    );
}

#[test]
fn training_loss_trends_down() {
    let schema = AttributeSchema::from_cardinalities(&[5, 5, 3]).unwrap();
    let train = encode(&dependent(1000, 8), &schema).unwrap();
    let (_, report) = train_embedder(&train, &schema, &spec(9)).unwrap();
    let l = &report.train_loss;
    assert!(l.last().unwrap() < &l[0]);
    for w in l.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{w:?}");
    }
    for w in l.windows(10) {
        assert!(w[9] < w[0]);
    }
}
