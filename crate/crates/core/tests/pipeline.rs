use tapdecode::dataset::{bundled_corpus, split_dataset, Dataset};
use tapdecode::dnd::{Checkpoint, DndConfig, GaussianBaseline, Model, Variant};
use tapdecode::eval::evaluate;
use tapdecode::par::Exec;
use tapdecode::simulator::{simulate_dataset, SimConfig};
use tapdecode::train::{fit, TrainConfig};

fn small() -> Dataset {
    let cfg = SimConfig {
        n_users: 4,
        phrases_per_user: 25,
        ..SimConfig::default()
    };
    simulate_dataset(&cfg, &bundled_corpus(), Exec::Parallel).unwrap()
}

#[test]
fn simulate_save_train_checkpoint_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = small();
    let path = dir.path().join("data.jsonl");
    d.save(&path).unwrap();
    let d = Dataset::load(&path).unwrap();
    let split = split_dataset(&d, 1, 1, 9).unwrap();
    assert_eq!(split.test.users().len(), 1);

    let cfg = TrainConfig {
        max_epochs: 2,
        model: DndConfig::new(Variant::Dnd, 1, 16),
        ..TrainConfig::default()
    };
    let out = fit(&split.train, &split.val, &cfg, Exec::Parallel).unwrap();
    assert_eq!(out.log.len(), 2);
    let ckpt = dir.path().join("model.ckpt");
    out.best.save(&ckpt).unwrap();
    let back = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(back.header.config, cfg.model);

    let a = evaluate(&out.best.model, &split.test).unwrap();
    let b = evaluate(&back.model, &split.test).unwrap();
    assert_eq!((a.char_errors, a.word_errors), (b.char_errors, b.word_errors));
    assert!(a.cer.is_finite() && a.wer.is_finite());
}

#[test]
fn gaussian_baseline_checkpoint_round_trip() {
    let d = small();
    let g = GaussianBaseline::fit(&d).unwrap();
    let c = Checkpoint::new(Model::Gaussian(g), 1, 0, Default::default());
    let back = Checkpoint::read_from(c.to_bytes().as_slice()).unwrap();
    let a = evaluate(&c.model, &d).unwrap();
    let b = evaluate(&back.model, &d).unwrap();
    assert_eq!(a.char_errors, b.char_errors);
    // Uniform guessing over 30 symbols would sit near 97%.
    assert!(a.cer < 90.0, "{}", a.cer);
}
