use xfdreid::gradcheck::{run_gradcheck, GradcheckOptions, Mutation};
use xfdreid::training::ParamTensor;

#[test]
fn full_suite_passes_for_every_tensor() {
    let report = run_gradcheck(&GradcheckOptions::default()).unwrap();
    assert!(report.passed, "{}", report.table());
    for t in ParamTensor::ALL {
        let check = report
            .checks
            .iter()
            .find(|c| c.suite == "model" && c.tensor == t.name())
            .unwrap_or_else(|| panic!("{} not checked", t.name()));
        assert!(check.configs > 0 && check.max_rel_error < 1e-5);
    }
    let pooling: Vec<_> = report.checks.iter().filter(|c| c.suite == "pooling").collect();
    assert!(pooling.iter().all(|c| c.configs >= 100));
    assert_eq!(report.single_frame_grad_w, 0.0);
}

#[test]
fn sign_flip_is_caught() {
    let report = run_gradcheck(&GradcheckOptions {
        configs: 8,
        mutation: Some(Mutation::FlipGradW),
        ..GradcheckOptions::default()
    })
    .unwrap();
    assert!(!report.passed);
    let worst = report.checks.iter().find(|c| c.tensor == "attention.w").unwrap();
    assert!(worst.max_rel_error > 1.0);
}
