use dcdm::camera::{
    build_warp_field, homography_from_pose, template_from_category, CameraIntrinsics, CameraPose, CameraTemplate,
    MotionCategory, PlaneAssumption, TemplateSpec,
};
use dcdm::tensor::Matrix3;
use proptest::prelude::*;

fn rot_y(a: f64) -> Matrix3 {
    Matrix3::from_rows([[a.cos(), 0.0, a.sin()], [0.0, 1.0, 0.0], [-a.sin(), 0.0, a.cos()]])
}

#[test]
fn lateral_translation_shifts_by_focal_over_depth() {
    // Hand-expanded K (I + t nᵀ/d) K⁻¹ with t = (tx, 0, 0): x' = x + fx·tx/d.
    let k = CameraIntrinsics::new(40.0, 30.0, 7.5, 5.5).unwrap();
    let plane = PlaneAssumption::fronto_parallel(2.0).unwrap();
    let h = homography_from_pose(&k, &CameraPose::translation_only([0.1, 0.0, 0.0]), &plane).unwrap();
    for (x, y) in [(0.0, 0.0), (3.0, 9.0), (15.0, 11.0)] {
        let (px, py) = h.apply(x, y);
        assert!((px - (x + 40.0 * 0.1 / 2.0)).abs() < 1e-12);
        assert!((py - y).abs() < 1e-12);
    }
}

#[test]
fn json_template_matches_category_template() {
    let spec = TemplateSpec::from_json(r#"{"category": "zoom_in", "speed": 0.1, "frames": 4}"#).unwrap();
    let a = spec.build(4, 8, 10).unwrap();
    let b = template_from_category(MotionCategory::ZoomIn, 0.1, 4, &CameraIntrinsics::default_for(8, 10), (8, 10))
        .unwrap();
    assert_eq!(a, b);
    let k = CameraIntrinsics::default_for(8, 10);
    let (x, y) = a.transitions[0].apply(2.0, 1.0);
    assert!((x - (k.cx + (2.0 - k.cx) * 1.1)).abs() < 1e-12);
    assert!((y - (k.cy + (1.0 - k.cy) * 1.1)).abs() < 1e-12);
}

#[test]
fn unknown_category_rejected() {
    assert!("dolly".parse::<MotionCategory>().is_err());
    let spec = TemplateSpec::from_json(r#"{"category": "orbit"}"#).unwrap();
    assert!(spec.build(3, 4, 4).is_err());
    assert!(TemplateSpec::from_json(r#"{"category": "left", "fov": 60}"#).is_err());
}

proptest! {
    #[test]
    fn pose_path_composes_like_step_products(
        angles in prop::collection::vec(-0.05f64..0.05, 1..5),
        shift in prop::collection::vec((-0.1f64..0.1, -0.1f64..0.1, -0.2f64..0.2), 5),
        depth in 0.5f64..4.0,
    ) {
        let k = CameraIntrinsics::default_for(12, 16);
        let plane = PlaneAssumption::fronto_parallel(depth).unwrap();
        let poses: Vec<CameraPose> = angles
            .iter()
            .zip(&shift)
            .map(|(&a, &(x, y, z))| CameraPose::new(rot_y(a), [x, y, z]).unwrap())
            .collect();
        let tpl = CameraTemplate::from_poses(&k, &poses, &plane).unwrap();
        for to in 1..=poses.len() {
            let (mut x, mut y) = (6.0, 4.0);
            for p in poses[..to].iter().rev() {
                let back = homography_from_pose(&k, p, &plane).unwrap().inverse().unwrap();
                (x, y) = back.apply(x, y);
            }
            let (cx, cy) = tpl.compose(0, to).apply(6.0, 4.0);
            prop_assert!((cx - x).abs() < 1e-9 && (cy - y).abs() < 1e-9);
        }
    }

    #[test]
    fn pan_out_of_bounds_fraction_is_exact(m in 0usize..4, s in 1usize..4, h in 4usize..12, w in 4usize..12) {
        let cat = [MotionCategory::Left, MotionCategory::Right, MotionCategory::Upward, MotionCategory::Downward][m];
        let tpl = template_from_category(cat, s as f64, 3, &CameraIntrinsics::default_for(h, w), (h, w)).unwrap();
        let field = build_warp_field(&tpl, (3, h, w)).unwrap();
        let strip = if cat.pan_direction().unwrap().0 != 0.0 { s * h } else { s * w };
        for t in 1..3 {
            prop_assert_eq!(field.transitions[t - 1].out_of_bounds_count(), strip);
        }
    }

    #[test]
    fn in_bounds_flags_match_source_range(m in 0usize..7, h in 2usize..10, w in 2usize..10) {
        let cat = MotionCategory::ALL[m];
        let speed = match cat { MotionCategory::Static => 0.0, MotionCategory::ZoomIn | MotionCategory::ZoomOut => 0.2, _ => 1.5 };
        let tpl = template_from_category(cat, speed, 2, &CameraIntrinsics::default_for(h, w), (h, w)).unwrap();
        let f = &build_warp_field(&tpl, (2, h, w)).unwrap().transitions[0];
        for i in 0..h * w {
            let inside = (0.0..=(w - 1) as f64).contains(&f.source_x[i]) && (0.0..=(h - 1) as f64).contains(&f.source_y[i]);
            prop_assert_eq!(f.in_bounds[i], inside);
        }
    }
}
