mod common;

use common::consensus;

#[test]
fn randomized_faults_n4() {
    let r = consensus::run(4, 200, 4);
    assert_eq!(r.safety_violations, 0, "{r:?}");
    assert_eq!(r.live, r.bounded, "{r:?}");
}

#[test]
fn randomized_faults_n7() {
    let r = consensus::run(7, 200, 7);
    assert_eq!(r.safety_violations, 0, "{r:?}");
    assert_eq!(r.live, r.bounded, "{r:?}");
}

