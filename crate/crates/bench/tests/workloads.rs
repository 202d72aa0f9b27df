use m3i_bench::{logits, oracle_joint, shapes, trainer, TRAIN_STEP_METHODS};
use m3i_core::heads::softmax_cross_entropy;
use m3i_core::oracle::exact_mi;

#[test]
fn oracle_joint_is_a_distribution() {
    let j = oracle_joint(8);
    assert!((j.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(exact_mi(&j, &[3], &[4], &[1, 2]) >= -1e-12);
}

#[test]
fn logits_give_a_finite_loss() {
    let l = logits(256);
    assert_eq!(l.len(), 256);
    let v = softmax_cross_entropy(&l).unwrap();
    assert!(v.is_finite() && v >= 0.0, "{v}");
}

#[test]
fn every_benchmarked_method_takes_a_step() {
    let ds = shapes(8);
    for m in TRAIN_STEP_METHODS {
        let mut t = trainer(m, 4, &ds);
        let rec = t.train_step().unwrap();
        assert!(rec.total.is_finite(), "{m}");
        assert_eq!(t.step, 1);
    }
}
