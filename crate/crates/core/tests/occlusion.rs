mod support;

use nalgebra::Vector3;
use sketchpose::body_model::{fit_primitives, sample_pose, PartLabel, Pose, Primitive, PrimitiveBody, SamplingConfig, SkeletonTemplate};
use sketchpose::camera::Camera;
use sketchpose::render::render_sketch;
use support::{mean_rating_error, DepthOracle};

#[test]
fn oracle_sees_a_sphere_behind_another() {
    let cam = Camera::default();
    let front = Primitive::sphere(Vector3::new(0.0, 0.9, -0.5), 0.1, PartLabel::JointSphere(sketchpose::body_model::JointId::LKnee));
    let back = Primitive::sphere(Vector3::new(0.0, 0.9, 0.0), 0.1, PartLabel::JointSphere(sketchpose::body_model::JointId::RKnee));
    let body = PrimitiveBody::from_primitives(vec![front, back]);
    let oracle = DepthOracle::new(&body, &cam);
    let sketch = sketchpose::render::VectorSketch {
        strokes: body
            .primitives
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let c = p.frame.position - Vector3::new(0.0, 0.0, 0.1);
                sketchpose::render::Stroke {
                    nodes: vec![sketchpose::render::StrokeNode { position: cam.project(&c).unwrap(), source: c, occluded: false }],
                    line_type: sketchpose::render::LineType::Contour,
                    part: p.label,
                    occlusion: 0.0,
                    hidden: false,
                    primitive: Some(i),
                }
            })
            .collect(),
        width: cam.width,
        height: cam.height,
        provenance: None,
    };
    assert_eq!(oracle.ratings(&sketch, &body, &cam), vec![0.0, 1.0]);
}

#[test]
fn rendered_ratings_match_depth_buffer() {
    let t = SkeletonTemplate::canonical();
    let cam = Camera::default();
    let mut poses = vec![Pose::standing(t)];
    poses.extend((0..4).map(|s| sample_pose(100 + s, &SamplingConfig::default(), t)));
    for pose in poses {
        let body = fit_primitives(t, &pose).unwrap();
        let sketch = render_sketch(&body, &cam).unwrap();
        let err = mean_rating_error(&sketch, &body, &cam);
        println!("mean rating error {err:.4}");
        assert!(err <= 0.05, "mean |o_s - oracle| = {err}");
    }
}
