use uavm::gradcheck::standard_suite;

#[test]
fn every_op_matches_finite_differences() {
    let results = standard_suite(20, 1e-5, 7).unwrap();
    let mut worst = std::collections::BTreeMap::new();
    for r in &results {
        let e = worst.entry(r.op).or_insert(0.0f64);
        *e = e.max(r.rel_error);
        assert!(r.rel_error < 1e-5, "{} {:?}: {}", r.op, r.shapes, r.rel_error);
    }
    assert_eq!(worst.len(), 14);
    for (op, e) in worst {
        println!("{op:>20} worst relative error {e:.2e}");
    }
}
