mod common;

use common::gradient_check;

fn check(method: &str) {
    let r = gradient_check(method, 11, 3);
    assert!(r.checked > 0);
    assert!(r.max_rel_err < 1e-4, "{method}: max relative error {:.3e} at {}", r.max_rel_err, r.worst);
}

#[test]
fn mim_pixel_gradients() {
    check("mim_pixel");
}

#[test]
fn instance_discrimination_gradients() {
    check("instance_discrimination");
}

#[test]
fn clip_gradients() {
    check("clip");
}

#[test]
fn m3i_gradients() {
    check("m3i");
}
