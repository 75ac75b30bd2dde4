use factlogic::gradcheck::GradCheckCase;

#[test]
fn hundred_random_configurations_pass() {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let case = GradCheckCase::random(seed).unwrap();
        let report = case.check(1e-5, 1e-4).unwrap();
        worst = worst.max(report.max_rel_error());
        assert!(report.passed, "seed {seed}: {report:?}");
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn double_precision_agrees_where_gradients_are_not_vanishing() {
    // in f64 only the absolute error is meaningful for structurally zero
    // entries; it stays at cancellation level
    for seed in 0..20 {
        let case = GradCheckCase::random(seed).unwrap();
        let report = case.check_in::<f64>(1e-5, 1e-4).unwrap();
        for g in &report.groups {
            assert!(g.max_abs_error < 1e-8, "seed {seed}: {g:?}");
        }
    }
}
