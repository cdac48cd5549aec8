mod support;

use ctm::gradcheck::GradCheckReport;

const SEEDS: u64 = 100;

fn sweep(name: &str, case: support::Case) {
    let mut total = GradCheckReport::default();
    for seed in 0..SEEDS {
        let report = case(seed).unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
        assert!(
            report.passed(),
            "{name} seed {seed}: {:?}",
            &report.failures[..report.failures.len().min(3)]
        );
        total.merge(report);
    }
    assert!(total.checked > 0, "{name} checked nothing");
}

#[test]
fn every_primitive_over_many_seeds() {
    for &(name, case) in support::PRIMITIVES {
        sweep(name, case);
    }
}

#[test]
fn full_tick_graph() {
    for seed in 0..3 {
        let report = support::full_ctm(seed).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", &report.failures[..report.failures.len().min(3)]);
        assert_eq!(report.checked, support::small_ctm(seed).unwrap().params.count());
    }
}
