use evlight::checks::{model_grad_check, primitive_grad_suite, voxel_suite};

#[test]
fn every_primitive_matches_finite_differences() {
    let results = primitive_grad_suite().unwrap();
    assert!(results.len() >= 20);
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.to_string()).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn whole_enhancement_network_matches_finite_differences() {
    let r = model_grad_check().unwrap();
    println!("{r}");
    assert!(r.passed, "{r}");
}

#[test]
fn voxel_checks_pass_on_random_streams() {
    for r in voxel_suite(200, 99).unwrap() {
        assert!(r.passed, "{r}");
    }
}

#[test]
fn stage_losses_match_finite_differences() {
    for r in evlight::checks::loss_grad_checks().unwrap() {
        println!("{r}");
        assert!(r.passed, "{r}");
    }
}
