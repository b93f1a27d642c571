mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vitlab::data::{AugmentPolicy, Dataset, Split};
use vitlab::models::{CnnConfig, Model, ModelConfig, Precision};
use vitlab::training::{evaluate_loss, Objective, Trainer};

fn toy_split(dir: &std::path::Path, per_class: usize, res: usize, split: Split) -> Dataset {
    let (_, manifest) = common::toy(dir, 2, per_class, res, 11);
    Dataset::load(&manifest, split, (res, res), 3).unwrap()
}

fn tiny_vit(res: usize) -> Model {
    Model::new("vit", &ModelConfig::Vit(common::vit(res, 4, 16, 2, 2, 2)), 3, Precision::F64).unwrap()
}

#[test]
fn epochs_are_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let train = toy_split(dir.path(), 16, 8, Split::Train);
    let policy = AugmentPolicy::default();
    let run = || {
        let mut model = tiny_vit(8);
        let mut trainer = Trainer::new(&model, Objective::CrossEntropy);
        let mut data_rng = ChaCha8Rng::seed_from_u64(1);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(2);
        let losses: Vec<f64> = (0..2)
            .map(|_| {
                let batches = train.batches(4, &policy, &mut data_rng).unwrap();
                trainer.train_epoch(&mut model, batches, 1e-3, &mut drop_rng).unwrap()
            })
            .collect();
        (losses, model.parameters().iter().flat_map(|p| p.data().to_vec()).collect::<Vec<f64>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn full_batch_loss_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let train = toy_split(dir.path(), 16, 8, Split::Train);
    let mut model = tiny_vit(8);
    let mut trainer = Trainer::new(&model, Objective::CrossEntropy);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut previous = f64::INFINITY;
    for epoch in 0..5 {
        trainer.train_epoch(&mut model, train.ordered_batches(train.len()), 1e-3, &mut rng).unwrap();
        let (loss, _) = evaluate_loss(&model, &Objective::CrossEntropy, train.ordered_batches(train.len())).unwrap();
        assert!(loss < previous, "epoch {epoch}: {loss} !< {previous}");
        previous = loss;
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let train = toy_split(dir.path(), 8, 8, Split::Train);
    let mut model = tiny_vit(8);
    let before = model.parameters().iter().map(|p| p.data().to_vec()).collect::<Vec<_>>();
    let mut trainer = Trainer::new(&model, Objective::Focal { gamma: 2.0, alpha: vec![1.0, 1.0] });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    trainer.train_epoch(&mut model, train.ordered_batches(4), 0.0, &mut rng).unwrap();
    let after = model.parameters().iter().map(|p| p.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(before, after);
}

#[test]
fn cnn_overfits_a_small_set() {
    let dir = tempfile::tempdir().unwrap();
    let train = toy_split(dir.path(), 27, 8, Split::Train);
    let cfg = CnnConfig { image_size: (8, 8), channels: 3, num_classes: 2, width: 8 };
    let mut model = Model::new("cnn", &ModelConfig::Cnn(cfg), 0, Precision::F64).unwrap();
    let mut trainer = Trainer::new(&model, Objective::CrossEntropy);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut accuracy = 0.0;
    for _ in 0..200 {
        trainer.train_epoch(&mut model, train.ordered_batches(train.len()), 1e-2, &mut rng).unwrap();
        accuracy = evaluate_loss(&model, &Objective::CrossEntropy, train.ordered_batches(train.len())).unwrap().1;
        if accuracy == 1.0 {
            break;
        }
    }
    assert_eq!(accuracy, 1.0, "{} training images", train.len());
}
