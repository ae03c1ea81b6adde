use fagan::gradcheck::{run_case, GradCheckConfig, CASES};

#[test]
fn every_case_matches_finite_differences() {
    let cfg = GradCheckConfig::default();
    let mut failed = Vec::new();
    for case in CASES {
        let r = run_case(case, &cfg, 7).unwrap();
        println!(
            "{:<24} checked {:>5} kinks {:>4} unstable {:>3} max err {:.2e}",
            r.name, r.checked, r.kinks, r.unstable, r.max_error
        );
        if !r.passed() {
            failed.push(format!("{}: {:.3e} at {} ({} unstable)", r.name, r.max_error, r.worst, r.unstable));
        }
    }
    assert!(failed.is_empty(), "{failed:#?}");
}
