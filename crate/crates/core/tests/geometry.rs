mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use scone_core::geometry::{estimate_relative_pose, ransac_essential, rotation_error, RansacConfig};

#[test]
fn clean_scene_is_recovered_exactly() {
    for seed in 0..5 {
        let (rot, trans) = common::clean_two_view_errors(seed, 100);
        assert!(rot < 1e-6, "seed {seed}: rotation {rot}");
        assert!(trans < 1e-6, "seed {seed}: translation {trans}");
    }
}

#[test]
fn ransac_survives_thirty_percent_outliers() {
    let ok = common::ransac_successes(20, 0.5f64.to_radians());
    assert!(ok >= 19, "{ok}/20");
}

#[test]
fn ransac_mask_separates_outliers() {
    let s = common::two_view(77, 200, 0.3);
    let k = common::intrinsics();
    let (_, mask) = ransac_essential(&s.corrs, &k, &k, &RansacConfig::default()).unwrap();
    let inliers_kept = mask.iter().zip(&s.is_outlier).filter(|(m, o)| **m && !**o).count();
    let outliers_kept = mask.iter().zip(&s.is_outlier).filter(|(m, o)| **m && **o).count();
    assert_eq!(inliers_kept, 140);
    assert!(outliers_kept <= 3, "{outliers_kept}");
    let pose = estimate_relative_pose(&s.corrs, &k, &k, &RansacConfig::default()).unwrap();
    assert_eq!(pose.n_inliers, inliers_kept + outliers_kept);
}

#[test]
fn rotation_error_recovers_axis_angle() {
    for (i, theta) in [0.1, FRAC_PI_2, 3.0].into_iter().enumerate() {
        for axis in [Vector3::x(), Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.3, 0.3, -1.0)] {
            let base = common::axis_angle(Vector3::new(0.2, 1.0, -0.4), 0.7 * i as f64);
            let r_gt = common::axis_angle(axis, theta) * base;
            let err = rotation_error(&base, &r_gt);
            assert!((err - theta).abs() < 1e-9, "theta {theta}: {err}");
        }
    }
    let r = common::axis_angle(Vector3::z(), PI);
    assert!((rotation_error(&nalgebra::Matrix3::identity(), &r) - PI).abs() < 1e-9);
}
